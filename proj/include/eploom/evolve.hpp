#pragma once
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>
#include <vector>

#include "eploom/core.hpp"
#include "eploom/errors.hpp"
#include "eploom/loops.hpp"

// Non-unitary Schroedinger evolution i dc/dt = H(theta(t)) c along a loop, with an
// embedded Dormand-Prince 5(4) stepper.  The state is renormalized after every
// accepted step (the removed factor accumulates in log_norm) and an independent
// quadrature of d ln|Psi|^2 / dt = 2 Im<c|Hc>/|c|^2 is carried alongside as a
// cross-check on the norm bookkeeping.

namespace eploom {

struct State {
  Vec2 c{Complex(1.0, 0.0), Complex(0.0, 0.0)};
  double log_norm = 0.0;  // physical state is exp(log_norm) * c
};

struct IntegratorOpts {
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  double max_step = 0.0;  // 0: no cap beyond segment clamping
  int sample_count = 1001;  // uniform theta samples per cycle (endpoints inclusive)
};

struct StateTrace {
  std::vector<double> thetas;  // signed theta at samples
  std::vector<State> states;
  std::vector<double> f_plus, f_minus, p_plus;  // NaN where ep_flag is set
  std::vector<bool> ep_flag;                    // sample sits on the coalescence set
  std::vector<double> log_norm_quad;  // independent quadrature of 2*log_norm
};

enum class Which { Plus, Minus };

inline std::pair<double, double> fidelity(const State& state, const EigenSystem& eig) {
  if (eig.at_ep) throw CoalescentEigensystem();
  const double wp = std::norm(apply_left(eig.l_plus, state.c));
  const double wm = std::norm(apply_left(eig.l_minus, state.c));
  const double den = wp + wm;
  if (den == 0.0) throw Error("state has no eigenbasis projection");
  return {wp / den, wm / den};
}

inline double population_plus(const State& state, const EigenSystem& eig) {
  return fidelity(state, eig).first;
}

inline State initial_eigenstate(const LoopSpec& loop, Which which) {
  const EigenSystem es = eigensystem(param_at(loop, 0.0), loop.omega_a);
  if (es.at_ep) throw CoalescentEigensystem();
  return State{which == Which::Plus ? es.r_plus : es.r_minus, 0.0};
}

namespace detail {

struct OdeY {
  Complex c0{}, c1{};
  double q = 0.0;  // quadrature of d ln|c|^2/dt (renormalization-invariant)
};

inline OdeY ode_add(const OdeY& a, double s, const OdeY& b) {
  return {a.c0 + s * b.c0, a.c1 + s * b.c1, a.q + s * b.q};
}

// Right-hand side in the frame rotating at omega_a: the uniform offset omega_a*I
// contributes only the global phase exp(-i*omega_a*t), which is factored out
// analytically (it is exactly unit-modulus, so norms, populations and fidelities
// cannot depend on it) and reapplied when states are sampled.  This keeps the
// step size controlled by the loop dynamics alone and makes every observable
// omega_a-invariant by construction instead of to integrator accuracy.
inline OdeY ode_rhs(const LoopSpec& l, double t, const OdeY& y) {
  const ParamPoint p = param_at(l, theta_at(l, t));
  const Complex h00(p.delta, -0.5 * p.gamma);
  const Complex h11(0.0, 0.5 * p.gamma);
  const Complex hc0 = h00 * y.c0 + p.g * y.c1;
  const Complex hc1 = p.g * y.c0 + h11 * y.c1;
  const double n2 = std::norm(y.c0) + std::norm(y.c1);
  OdeY d;
  d.c0 = Complex(0.0, -1.0) * hc0;
  d.c1 = Complex(0.0, -1.0) * hc1;
  d.q = 2.0 * (std::conj(y.c0) * hc0 + std::conj(y.c1) * hc1).imag() / n2;
  return d;
}

// Dormand-Prince 5(4) coefficients (FSAL: stage 7 equals the next step's stage 1).
struct Dopri5 {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

struct Stepper {
  const LoopSpec& loop;
  const IntegratorOpts& opts;
  double t;
  OdeY y;
  OdeY k1;           // FSAL stage
  double h = 0.0;    // current step-size guess
  double log_norm = 0.0;

  Stepper(const LoopSpec& l, const IntegratorOpts& o, const State& initial)
      : loop(l), opts(o), t(0.0) {
    y.c0 = initial.c[0];
    y.c1 = initial.c[1];
    y.q = 0.0;
    log_norm = initial.log_norm;
    renormalize();
    k1 = ode_rhs(loop, t, y);
  }

  void renormalize() {
    const double n = std::sqrt(std::norm(y.c0) + std::norm(y.c1));
    if (n == 0.0) throw Error("state collapsed to zero");
    log_norm += std::log(n);
    y.c0 /= n;
    y.c1 /= n;
  }

  // Advance exactly to t_end, renormalizing after each accepted step.
  void advance_to(double t_end) {
    using D = Dopri5;
    const double span = t_end - t;
    if (span <= 0.0) return;
    const double t_scale = std::max(std::abs(t_end), total_time(loop));
    if (h <= 0.0) h = span / 16.0;
    if (opts.max_step > 0.0) h = std::min(h, opts.max_step);

    while (t < t_end) {
      bool clamped = false;
      double hs = h;
      if (t + hs >= t_end) {
        hs = t_end - t;
        clamped = true;
      }
      if (hs < 1e-14 * t_scale) throw StepSizeUnderflow();

      const OdeY k2 = ode_rhs(loop, t + D::c2 * hs, ode_add(y, hs * D::a21, k1));
      OdeY ytmp = ode_add(ode_add(y, hs * D::a31, k1), hs * D::a32, k2);
      const OdeY k3 = ode_rhs(loop, t + D::c3 * hs, ytmp);
      ytmp = ode_add(ode_add(ode_add(y, hs * D::a41, k1), hs * D::a42, k2), hs * D::a43, k3);
      const OdeY k4 = ode_rhs(loop, t + D::c4 * hs, ytmp);
      ytmp = ode_add(ode_add(ode_add(ode_add(y, hs * D::a51, k1), hs * D::a52, k2),
                             hs * D::a53, k3),
                     hs * D::a54, k4);
      const OdeY k5 = ode_rhs(loop, t + D::c5 * hs, ytmp);
      ytmp = ode_add(ode_add(ode_add(ode_add(ode_add(y, hs * D::a61, k1), hs * D::a62, k2),
                                     hs * D::a63, k3),
                             hs * D::a64, k4),
                     hs * D::a65, k5);
      const OdeY k6 = ode_rhs(loop, t + hs, ytmp);
      OdeY ynew = ode_add(
          ode_add(ode_add(ode_add(ode_add(y, hs * D::b1, k1), hs * D::b3, k3), hs * D::b4, k4),
                  hs * D::b5, k5),
          hs * D::b6, k6);
      const OdeY k7 = ode_rhs(loop, t + hs, ynew);

      // Embedded error estimate (5th minus 4th order).
      const Complex ec0 = hs * (D::e1 * k1.c0 + D::e3 * k3.c0 + D::e4 * k4.c0 +
                                D::e5 * k5.c0 + D::e6 * k6.c0 + D::e7 * k7.c0);
      const Complex ec1 = hs * (D::e1 * k1.c1 + D::e3 * k3.c1 + D::e4 * k4.c1 +
                                D::e5 * k5.c1 + D::e6 * k6.c1 + D::e7 * k7.c1);
      const double eq = hs * (D::e1 * k1.q + D::e3 * k3.q + D::e4 * k4.q + D::e5 * k5.q +
                              D::e6 * k6.q + D::e7 * k7.q);
      auto scaled = [&](double err, double y0, double y1) {
        const double sc = opts.abs_tol + opts.rel_tol * std::max(y0, y1);
        return (err / sc) * (err / sc);
      };
      const double err =
          std::sqrt((scaled(std::abs(ec0), std::abs(y.c0), std::abs(ynew.c0)) +
                     scaled(std::abs(ec1), std::abs(y.c1), std::abs(ynew.c1)) +
                     scaled(std::abs(eq), std::abs(y.q), std::abs(ynew.q))) /
                    3.0);

      if (err <= 1.0) {
        t += hs;
        y = ynew;
        k1 = k7;
        const double n = std::sqrt(std::norm(y.c0) + std::norm(y.c1));
        if (n == 0.0) throw Error("state collapsed to zero");
        log_norm += std::log(n);
        y.c0 /= n;
        y.c1 /= n;
        k1.c0 /= n;  // FSAL stage of a linear ODE rescales with the state
        k1.c1 /= n;
        double fac = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        double hnext = hs * fac;
        if (clamped) hnext = std::max(hnext, h);  // don't let segment clamps shrink h
        h = hnext;
        if (opts.max_step > 0.0) h = std::min(h, opts.max_step);
      } else {
        h = hs * std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
      }
    }
  }

  State state() const {
    if (loop.omega_a == 0.0) return State{Vec2{y.c0, y.c1}, log_norm};
    const Complex phase = std::exp(Complex(0.0, -loop.omega_a * t));
    return State{Vec2{phase * y.c0, phase * y.c1}, log_norm};
  }
};

}  // namespace detail

// Integrates along the loop, landing exactly on each traversal parameter in s_grid
// (s = |theta| in [0, 2*pi*cycles], ascending, s_grid[0] == 0).  Observables use
// labels continued from the theta = 0 principal labeling; an exact continuation tie
// (EP crossed between samples) restarts from the principal labeling; samples on the
// coalescence set get NaN observables and keep the previous label for their successors.
inline StateTrace propagate_at(const LoopSpec& loop, const State& initial,
                               const std::vector<double>& s_grid,
                               const IntegratorOpts& opts = {}) {
  if (s_grid.empty() || s_grid.front() != 0.0) throw Error("sample grid must start at 0");
  const std::size_t n = s_grid.size();
  StateTrace tr;
  tr.thetas.reserve(n);
  tr.states.reserve(n);
  tr.f_plus.reserve(n);
  tr.f_minus.reserve(n);
  tr.p_plus.reserve(n);
  tr.ep_flag.reserve(n);
  tr.log_norm_quad.reserve(n);

  detail::Stepper stepper(loop, opts, initial);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EigenSystem prev{};
  bool have_prev = false;

  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0) {
      if (s_grid[k] <= s_grid[k - 1]) throw Error("sample grid must be ascending");
      stepper.advance_to(s_grid[k] / loop.omega);
    }
    const double theta = theta_sign(loop) * s_grid[k];
    tr.thetas.push_back(theta);
    tr.states.push_back(stepper.state());
    tr.log_norm_quad.push_back(stepper.y.q);

    EigenSystem cur = eigensystem(param_at(loop, theta), loop.omega_a);
    if (have_prev) {
      try {
        cur = relabel_continuous(prev, cur);
      } catch (const AmbiguousContinuation&) {
        // exact tie: restart from the principal labeling
      }
    }
    if (cur.at_ep) {
      tr.f_plus.push_back(nan);
      tr.f_minus.push_back(nan);
      tr.p_plus.push_back(nan);
      tr.ep_flag.push_back(true);
      // keep `prev` so the label chain survives the coalescent sample
    } else {
      const auto [fp, fm] = fidelity(tr.states.back(), cur);
      tr.f_plus.push_back(fp);
      tr.f_minus.push_back(fm);
      tr.p_plus.push_back(fp);
      tr.ep_flag.push_back(false);
      prev = cur;
      have_prev = true;
    }
  }
  return tr;
}

inline std::vector<double> uniform_sample_grid(const LoopSpec& loop, int sample_count) {
  if (sample_count < 2) throw Error("sample_count must be at least 2");
  const std::size_t total = static_cast<std::size_t>(sample_count - 1) * loop.cycles + 1;
  std::vector<double> s(total);
  const double ds = kTwoPi / (sample_count - 1);
  for (std::size_t j = 0; j < total; ++j) s[j] = ds * static_cast<double>(j);
  s.back() = kTwoPi * loop.cycles;
  return s;
}

// One full period per cycle, sample_count uniform theta samples per cycle.
inline StateTrace propagate(const LoopSpec& loop, const State& initial,
                            const IntegratorOpts& opts = {}) {
  return propagate_at(loop, initial, uniform_sample_grid(loop, opts.sample_count), opts);
}

// Endpoint state only (no intermediate samples).
inline State final_state(const LoopSpec& loop, const State& initial,
                         const IntegratorOpts& opts = {}) {
  detail::Stepper stepper(loop, opts, initial);
  stepper.advance_to(total_time(loop));
  return stepper.state();
}

// F+(T) from a phi_plus start, measured in the FIXED theta = 0 principal eigenbasis
// (start point == end point of a closed loop); this is the map/calibration observable.
inline double return_fidelity(const LoopSpec& loop, const IntegratorOpts& opts = {}) {
  const State fin = final_state(loop, initial_eigenstate(loop, Which::Plus), opts);
  const EigenSystem es0 = eigensystem(param_at(loop, 0.0), loop.omega_a);
  return fidelity(fin, es0).first;
}

struct CalibrationRow {
  double omega = 0.0;
  double t1_f_ccw = 0.0, t1_f_cw = 0.0;  // loop-1 return fidelities
  double t3_f_ccw = 0.0, t3_f_cw = 0.0;  // loop-3 return fidelities
  double contrast = 0.0;                 // |t3_f_cw - t3_f_ccw|
  bool pass = false;
};

inline std::vector<CalibrationRow> calibration_scan(const LoopSpec& loop1,
                                                    const std::vector<double>& candidates,
                                                    const IntegratorOpts& opts = {}) {
  std::vector<CalibrationRow> rows;
  rows.reserve(candidates.size());
  for (double w : candidates) {
    if (!(w > 0.0)) throw Error("calibration candidates must be positive");
    CalibrationRow row;
    row.omega = w;
    LoopSpec l1 = loop1;
    l1.omega = w;
    l1.direction = Direction::CCW;
    row.t1_f_ccw = return_fidelity(l1, opts);
    l1.direction = Direction::CW;
    row.t1_f_cw = return_fidelity(l1, opts);
    LoopSpec l3 = preset(3);
    l3.omega = w;
    l3.omega_a = loop1.omega_a;
    l3.direction = Direction::CCW;
    row.t3_f_ccw = return_fidelity(l3, opts);
    l3.direction = Direction::CW;
    row.t3_f_cw = return_fidelity(l3, opts);
    row.contrast = std::abs(row.t3_f_cw - row.t3_f_ccw);
    row.pass = row.t1_f_ccw >= 0.98 && row.t1_f_cw >= 0.98 && row.contrast >= 0.8;
    rows.push_back(row);
  }
  return rows;
}

// Largest candidate for which loop-1 returns with F+(T) >= 0.98 in both directions
// AND the loop-3 chiral contrast reaches 0.8.  Throws CalibrationFailure (reporting
// the best achieved metrics) when no candidate qualifies.
inline double calibrate_omega(const LoopSpec& loop1, const std::vector<double>& candidates,
                              const IntegratorOpts& opts = {}) {
  if (candidates.empty()) throw Error("calibration candidates must be nonempty");
  const auto rows = calibration_scan(loop1, candidates, opts);
  const CalibrationRow* best = nullptr;
  const CalibrationRow* winner = nullptr;
  for (const auto& r : rows) {
    if (r.pass && (!winner || r.omega > winner->omega)) winner = &r;
    auto score = [](const CalibrationRow& x) {
      return std::min(std::min(x.t1_f_ccw, x.t1_f_cw) / 0.98, x.contrast / 0.8);
    };
    if (!best || score(r) > score(*best)) best = &r;
  }
  if (winner) return winner->omega;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "best candidate omega=%g: loop-1 F+(T) ccw=%.6f cw=%.6f, loop-3 contrast=%.6f",
                best->omega, best->t1_f_ccw, best->t1_f_cw, best->contrast);
  throw CalibrationFailure(buf);
}

}  // namespace eploom
