#pragma once
#include <bit>
#include <cmath>
#include <cstddef>
#include <vector>

#include "eploom/core.hpp"
#include "eploom/errors.hpp"
#include "eploom/loops.hpp"

// Loop topology: the half-integer winding nu of the continued energy splitting,
// computed from phase increments of the radicand f = (2*gamma+2i*delta)^2 - 16 g^2
// (whose argument winds at twice the splitting's rate), plus an independent
// signed-crossing counter of f about the origin.

namespace eploom {

struct WindingResult {
  double nu = 0.0;
  double nu_quantized = 0.0;  // nearest half-integer
  int samples_used = 0;
  double residual = 0.0;  // |nu - nu_quantized|
};

struct EncircleReport {
  int f_winding = 0;          // winding of the radicand path about the origin
  bool crosses_origin = false;  // path meets the origin within tolerance
};

namespace detail {

// Balanced pairwise sum.  Callers use power-of-two lengths, which makes the tree
// mirror-symmetric: summing the array element-negated (and/or reversed) yields the
// exact bitwise negation, giving exact orientation antisymmetry of the winding.
inline double pairwise_sum(const double* a, std::size_t n) {
  if (n == 1) return a[0];
  if (n == 2) return a[0] + a[1];
  const std::size_t h = n / 2;
  return pairwise_sum(a, h) + pairwise_sum(a + h, n - h);
}

// Phase increment arg(f1/f0) in (-pi, pi], division-free.
inline double phase_increment(const Complex& f0, const Complex& f1) {
  const Complex w = f1 * std::conj(f0);
  return std::atan2(w.imag(), w.real());
}

struct RadicandScan {
  std::vector<double> inc;  // n increments (closed: last one wraps to sample 0)
  double max_abs_inc = 0.0;
  double max_abs_f = 0.0;
  std::size_t worst = 0;  // index of the largest increment
};

inline Complex radicand_on_loop(const LoopSpec& loop, double s) {
  return radicand(param_at(loop, theta_sign(loop) * s));
}

inline RadicandScan scan_radicand(const LoopSpec& loop, std::size_t n, double span) {
  RadicandScan sc;
  sc.inc.resize(n);
  const double ds = span / static_cast<double>(n);
  Complex f0 = radicand_on_loop(loop, 0.0), fprev = f0;
  for (std::size_t j = 0; j < n; ++j) {
    sc.max_abs_f = std::max(sc.max_abs_f, std::abs(fprev));
    const Complex fnext = (j + 1 == n) ? f0 : radicand_on_loop(loop, ds * double(j + 1));
    sc.inc[j] = phase_increment(fprev, fnext);
    if (std::abs(sc.inc[j]) > sc.max_abs_inc) {
      sc.max_abs_inc = std::abs(sc.inc[j]);
      sc.worst = j;
    }
    fprev = fnext;
  }
  return sc;
}

// Minimum |f| on [s0, s1] via dense scan plus golden-section refinement.
inline double min_abs_radicand(const LoopSpec& loop, double s0, double s1) {
  double best = std::abs(radicand_on_loop(loop, s0));
  double bs = s0;
  const int kScan = 128;
  for (int i = 1; i <= kScan; ++i) {
    const double s = s0 + (s1 - s0) * i / kScan;
    const double v = std::abs(radicand_on_loop(loop, s));
    if (v < best) {
      best = v;
      bs = s;
    }
  }
  double lo = std::max(s0, bs - (s1 - s0) / kScan);
  double hi = std::min(s1, bs + (s1 - s0) / kScan);
  const double gr = 0.6180339887498949;
  for (int it = 0; it < 100; ++it) {
    const double m1 = hi - gr * (hi - lo), m2 = lo + gr * (hi - lo);
    if (std::abs(radicand_on_loop(loop, m1)) < std::abs(radicand_on_loop(loop, m2)))
      hi = m2;
    else
      lo = m1;
  }
  const double mid = 0.5 * (lo + hi);
  return std::min(best, std::abs(radicand_on_loop(loop, mid)));
}

}  // namespace detail

// nu = -(1/2pi) * sum of continued splitting-phase increments
//    = -(1/4pi) * sum of radicand-phase increments.
// Sample count doubles until every radicand increment is below pi/2 and the result
// sits within 1e-6 of a half-integer.  A persistent blow-up interval is probed for a
// coalescence transit ("loop passes through EP"); otherwise the doubling cap aborts
// with "refinement cap exceeded".
inline WindingResult winding_number(const LoopSpec& loop, int initial_samples = 1024) {
  const double span = kTwoPi * loop.cycles;
  std::size_t n = std::bit_ceil(static_cast<std::size_t>(std::max(initial_samples, 16)));
  constexpr std::size_t kCap = std::size_t{1} << 22;

  for (;; n *= 2) {
    if (n > kCap) throw RefinementCapExceeded();
    const double ds = span / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (is_ep(param_at(loop, theta_sign(loop) * ds * double(j)))) throw LoopThroughEp();
    }
    const auto sc = detail::scan_radicand(loop, n, span);
    if (sc.max_abs_inc >= 0.5 * kPi) {
      // Distinguish a genuine EP transit from fine structure before refining further.
      const double s0 = ds * static_cast<double>(sc.worst);
      const double fmin = detail::min_abs_radicand(loop, s0, s0 + ds);
      if (fmin < 1e-9 * std::max(1e-300, sc.max_abs_f)) throw LoopThroughEp();
      continue;
    }
    const double sum = detail::pairwise_sum(sc.inc.data(), n);
    WindingResult r;
    r.nu = -sum / (2.0 * kTwoPi) + 0.0;  // +0.0 canonicalizes -0 (exact for all finite values)
    r.nu_quantized = 0.5 * std::round(2.0 * r.nu) + 0.0;
    r.residual = std::abs(r.nu - r.nu_quantized);
    r.samples_used = static_cast<int>(n);
    if (r.residual <= 1e-6) return r;
  }
}

// Signed crossings of the positive real axis by the closed radicand path: an
// algorithm independent of phase accumulation, used as the oracle for nu
// (nu_quantized == -f_winding/2).  Paths that ride along the real axis (delta == 0
// loop families) produce no transversal crossings; their sign changes through the
// origin set crosses_origin instead.  A sample equal to exactly zero throws.
inline EncircleReport encircles_ep(const LoopSpec& loop, int samples = 4096) {
  const double span = kTwoPi * loop.cycles;
  const std::size_t n = static_cast<std::size_t>(std::max(samples, 16));
  std::vector<Complex> f(n);
  double scale = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    f[j] = detail::radicand_on_loop(loop, span * double(j) / double(n));
    if (f[j] == Complex(0.0, 0.0)) throw RadicandHitsOrigin();
    scale = std::max(scale, std::abs(f[j]));
  }
  const double tol_origin = 1e-9 * scale;
  EncircleReport rep;
  for (std::size_t j = 0; j < n; ++j) {
    const Complex& a = f[j];
    const Complex& b = f[(j + 1) % n];
    if (std::abs(a) <= tol_origin) rep.crosses_origin = true;
    const bool below_a = a.imag() < 0.0, below_b = b.imag() < 0.0;
    if (a.imag() == 0.0 && b.imag() == 0.0) {
      if ((a.real() < 0.0) != (b.real() < 0.0)) rep.crosses_origin = true;
      continue;
    }
    if (below_a != below_b) {
      const double x =
          (b.imag() * a.real() - a.imag() * b.real()) / (b.imag() - a.imag());
      if (std::abs(x) <= tol_origin)
        rep.crosses_origin = true;
      else if (x > 0.0)
        rep.f_winding += below_a ? 1 : -1;  // upward crossing: +1
    }
  }
  return rep;
}

// The coalescence set in (delta, g, gamma) is {delta = 0, gamma = +-2g}; for a
// given coupling these are the two candidate points (one degenerate point at g = 0).
inline std::vector<ParamPoint> ep_locations(double g) {
  if (g == 0.0) return {ParamPoint{0.0, 0.0, 0.0}};
  return {ParamPoint{0.0, g, 2.0 * g}, ParamPoint{0.0, g, -2.0 * g}};
}

}  // namespace eploom
