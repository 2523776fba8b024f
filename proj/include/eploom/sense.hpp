#pragma once
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>
#include <vector>

#include "eploom/core.hpp"
#include "eploom/errors.hpp"
#include "eploom/evolve.hpp"
#include "eploom/loops.hpp"

// Sensing susceptibilities along loops:
//  - analytic (eigenvalue-based): chi_X = d Delta_E / d X via the chain rule
//    through the loop template, evaluated pointwise on the principal branch,
//    or branch-continued per lambda column for (theta, lambda) landscapes;
//  - eigenstate-based: chi_state = d P_plus(theta) / d lambda by finite
//    differences across a lambda grid of independently propagated loops
//    (central interior, one-sided edges).

namespace eploom {

enum class SenseKind { ChiG0, ChiGamma0, ChiState };

struct SenseSample {
  double theta = 0.0;
  double lambda = 0.0;
  Complex delta_e{};
  Complex chi{};  // eigenvalue-based value; ChiState stores its real value in chi.real()
  SenseKind kind = SenseKind::ChiG0;
  bool singular = false;  // EP-adjacent: value unreliable/non-finite
  bool missing = false;   // no value (coalescent sample or failed column)
};

struct ChiValue {
  Complex value{};
  bool singular = false;
};

namespace detail {

// d Delta_E / d X for amplitude X, given the splitting on the caller's branch:
//   2 DE dDE = 8 g dg - 2 (gamma + i delta) (dgamma + i ddelta)
inline Complex chi_from_derivs(const ParamPoint& p, const Complex& de, double dg,
                               double dgamma, double ddelta) {
  const Complex gd(p.gamma, p.delta);
  return (4.0 * p.g * dg - gd * Complex(dgamma, ddelta)) / de;
}

inline void amplitude_derivs(const LoopSpec& loop, double theta, PerturbTarget target,
                             double* dg, double* dgamma, double* ddelta) {
  *dg = *dgamma = *ddelta = 0.0;
  switch (target) {
    case PerturbTarget::G0:
      *dg = dg_dG0(loop, theta);
      break;
    case PerturbTarget::Gamma0:
      *dgamma = dgamma_dGamma0(loop, theta);
      break;
    case PerturbTarget::Delta0:
      *ddelta = ddelta_dDelta0(loop, theta);
      break;
  }
}

}  // namespace detail

// chi_G0 = (4 g / Delta_E) * dg/dG0, principal branch; exactly 0 when the loop's g
// is G0-independent.  Divergence at coalescence is reported via the flag, never
// clipped: the blow-up is the sensing signal.
inline ChiValue chi_g0(const LoopSpec& loop, double theta) {
  const ParamPoint p = param_at(loop, theta);
  ChiValue out;
  out.singular = is_ep(p);
  const double dg = dg_dG0(loop, theta);
  if (dg == 0.0) {
    out.value = Complex(0.0, 0.0);
    return out;
  }
  out.value = detail::chi_from_derivs(p, energy_splitting(p), dg, 0.0, 0.0);
  return out;
}

// chi_Gamma0 = -((gamma + i delta) / Delta_E) * sin^2(theta/2); exactly 0 for
// constant-gamma loops.
inline ChiValue chi_gamma0(const LoopSpec& loop, double theta) {
  const ParamPoint p = param_at(loop, theta);
  ChiValue out;
  out.singular = is_ep(p);
  const double dgamma = dgamma_dGamma0(loop, theta);
  if (dgamma == 0.0) {
    out.value = Complex(0.0, 0.0);
    return out;
  }
  out.value = detail::chi_from_derivs(p, energy_splitting(p), 0.0, dgamma, 0.0);
  return out;
}

// Splitting + applicable analytic chi over a (theta, lambda) grid of perturbed
// loops (lambda-major order).  Delta_E is branch-continued along each lambda
// column so landscapes stay smooth in theta; a single-point grid reduces to the
// pointwise principal-branch operations.
inline std::vector<SenseSample> splitting_landscape(const LoopSpec& loop,
                                                    const PerturbationSpec& pert,
                                                    const std::vector<double>& lambda_grid,
                                                    const std::vector<double>& theta_grid) {
  if (lambda_grid.empty() || theta_grid.empty()) throw Error("grids must be nonempty");
  const SenseKind kind =
      pert.target == PerturbTarget::Gamma0 ? SenseKind::ChiGamma0 : SenseKind::ChiG0;
  std::vector<SenseSample> out;
  out.reserve(lambda_grid.size() * theta_grid.size());
  for (double lam : lambda_grid) {
    PerturbationSpec col = pert;
    col.lambda = lam;
    const LoopSpec ploop = apply_perturbation(loop, col);
    BranchConvention branch;  // principal at the first theta sample, continued after
    bool have_prev = false;
    for (double theta : theta_grid) {
      const ParamPoint p = param_at(ploop, theta);
      if (have_prev) branch.mode = BranchMode::ContinuedFromPrevious;
      const Complex de = energy_splitting(p, branch);
      branch.previous_delta_e = de;
      have_prev = true;
      SenseSample s;
      s.theta = theta;
      s.lambda = lam;
      s.delta_e = de;
      s.kind = kind;
      s.singular = is_ep(p);
      double dg, dgamma, ddelta;
      detail::amplitude_derivs(ploop, theta, pert.target, &dg, &dgamma, &ddelta);
      s.chi = (dg == 0.0 && dgamma == 0.0 && ddelta == 0.0)
                  ? Complex(0.0, 0.0)
                  : detail::chi_from_derivs(p, de, dg, dgamma, ddelta);
      out.push_back(s);
    }
  }
  return out;
}

// P_plus(theta, lambda) from one propagation per lambda (parallel over columns,
// deterministic assembly), then d P_plus / d lambda across the grid: central
// differences in the interior, one-sided at the edges.  Stencils touching a
// missing P (coalescent sample / failed column) yield missing samples.
inline std::vector<SenseSample> eigenstate_susceptibility(
    const LoopSpec& loop, const PerturbationSpec& pert, const std::vector<double>& lambda_grid,
    const std::vector<double>& theta_grid, Which initial, const IntegratorOpts& opts = {},
    int jobs = 0) {
  if (lambda_grid.size() < 2) throw Error("lambda grid needs at least 2 points");
  if (theta_grid.empty()) throw Error("theta grid must be nonempty");
  const std::size_t nl = lambda_grid.size(), nt = theta_grid.size();
  for (std::size_t i = 1; i < nl; ++i)
    if (lambda_grid[i] <= lambda_grid[i - 1]) throw Error("lambda grid must be ascending");

  // Traversal parameters for the sample grid (|theta| along the loop's direction).
  std::vector<double> s_grid(nt);
  for (std::size_t k = 0; k < nt; ++k) s_grid[k] = std::abs(theta_grid[k]);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> pplus(nl);       // [lambda][theta]
  std::vector<std::vector<Complex>> des(nl);        // continued splitting per column
  std::vector<std::vector<bool>> singular(nl);

  auto run_column = [&](std::size_t i) {
    PerturbationSpec col = pert;
    col.lambda = lambda_grid[i];
    const LoopSpec ploop = apply_perturbation(loop, col);
    auto& pp = pplus[i];
    auto& de = des[i];
    auto& sg = singular[i];
    pp.assign(nt, nan);
    de.assign(nt, Complex(nan, nan));
    sg.assign(nt, false);
    try {
      const StateTrace tr = propagate_at(ploop, initial_eigenstate(ploop, initial), s_grid, opts);
      BranchConvention branch;
      bool have_prev = false;
      for (std::size_t k = 0; k < nt; ++k) {
        pp[k] = tr.p_plus[k];
        sg[k] = tr.ep_flag[k];
        const ParamPoint p = param_at(ploop, tr.thetas[k]);
        if (have_prev) branch.mode = BranchMode::ContinuedFromPrevious;
        de[k] = energy_splitting(p, branch);
        branch.previous_delta_e = de[k];
        have_prev = true;
      }
    } catch (const Error&) {
      sg.assign(nt, true);  // whole column failed (e.g. coalescent start)
    }
  };

  int workers = jobs > 0 ? jobs : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(nl)));
  if (workers == 1) {
    for (std::size_t i = 0; i < nl; ++i) run_column(i);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      const std::size_t lo = nl * w / workers, hi = nl * (w + 1) / workers;
      pool.emplace_back([&, lo, hi] {
        for (std::size_t i = lo; i < hi; ++i) run_column(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<SenseSample> out;
  out.reserve(nl * nt);
  for (std::size_t i = 0; i < nl; ++i) {
    for (std::size_t k = 0; k < nt; ++k) {
      SenseSample s;
      s.theta = theta_grid[k];
      s.lambda = lambda_grid[i];
      s.delta_e = des[i][k];
      s.kind = SenseKind::ChiState;
      s.singular = singular[i][k];
      const std::size_t lo = i == 0 ? 0 : i - 1;
      const std::size_t hi = i + 1 == nl ? i : i + 1;
      const double dp = pplus[hi][k] - pplus[lo][k];
      const double dl = lambda_grid[hi] - lambda_grid[lo];
      const double v = dp / dl;
      if (std::isfinite(v)) {
        s.chi = Complex(v, 0.0);
      } else {
        s.chi = Complex(nan, 0.0);
        s.missing = true;
      }
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace eploom
