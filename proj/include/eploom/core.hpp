#pragma once
#include <array>
#include <cmath>
#include <complex>
#include <utility>

#include "eploom/errors.hpp"

// Closed-form eigensystem of the two-level gain/loss Hamiltonian
//   H = [[w_a + delta - i*gamma/2, g], [g, w_a + i*gamma/2]]   (hbar = 1)
// with an explicit square-root branch policy and exceptional-point detection.

namespace eploom {

using Complex = std::complex<double>;
using Vec2 = std::array<Complex, 2>;
using Mat2 = std::array<Vec2, 2>;  // row-major

inline constexpr double kEpTol = 1e-12;

struct ParamPoint {
  double delta = 0.0;  // detuning
  double g = 0.0;      // coupling
  double gamma = 0.0;  // gain/loss rate
};

inline Mat2 hamiltonian(const ParamPoint& p, double omega_a = 0.0) {
  return Mat2{Vec2{Complex(omega_a + p.delta, -0.5 * p.gamma), Complex(p.g, 0.0)},
              Vec2{Complex(p.g, 0.0), Complex(omega_a, 0.5 * p.gamma)}};
}

// Radicand of the splitting: f = (2*gamma + 2i*delta)^2 - 16 g^2.
// Its winding about the origin is the topological workhorse (see topo.hpp).
inline Complex radicand(const ParamPoint& p) {
  const Complex w(2.0 * p.gamma, 2.0 * p.delta);
  return w * w - 16.0 * p.g * p.g;
}

// Principal-branch splitting Delta_E = (i/2) * sqrt(f).  std::sqrt maps onto
// arguments in (-pi/2, pi/2], so e.g. (delta=0, g=0.1, gamma=0) -> -0.2.
// The radicand components are canonicalized (+0.0 rewrites -0 to +0, exact for
// all finite values) before the root: std::sqrt honors IEEE signed zeros on the
// branch cut, and without this, parameter points that compare equal (delta or
// gamma equal to -0.0, e.g. Delta0*sin(-0) on clockwise loops) would land on
// opposite sides of the cut and flip the branch.
inline Complex energy_splitting(const ParamPoint& p) {
  const Complex f = radicand(p);
  return Complex(0.0, 0.5) * std::sqrt(Complex(f.real() + 0.0, f.imag() + 0.0));
}

enum class BranchMode { Principal, ContinuedFromPrevious };

struct BranchConvention {
  BranchMode mode = BranchMode::Principal;
  Complex previous_delta_e{0.0, 0.0};  // used by ContinuedFromPrevious
};

inline Complex energy_splitting(const ParamPoint& p, const BranchConvention& b) {
  Complex de = energy_splitting(p);
  if (b.mode == BranchMode::ContinuedFromPrevious &&
      std::norm(-de - b.previous_delta_e) < std::norm(de - b.previous_delta_e)) {
    de = -de;
  }
  return de;
}

// |Delta_E| below tol * max(1, |gamma|+|delta|+|g|) counts as coalescent;
// this also flags the diabolic degeneracy of the zero matrix.
inline bool is_ep(const ParamPoint& p, double tol = kEpTol) {
  return std::abs(energy_splitting(p)) <
         tol * std::max(1.0, std::abs(p.gamma) + std::abs(p.delta) + std::abs(p.g));
}

struct EigenSystem {
  Complex e_plus{}, e_minus{};
  Complex delta_e{};  // e_plus - e_minus by construction
  Vec2 r_plus{}, r_minus{};
  // Left eigenvectors as covectors under the BILINEAR pairing <l,v> = l0*v0 + l1*v1
  // (H is complex symmetric, so left rows are transposes, not conjugates).
  Vec2 l_plus{}, l_minus{};
  bool at_ep = false;
};

inline Complex apply_left(const Vec2& l, const Vec2& v) { return l[0] * v[0] + l[1] * v[1]; }

// E+- = w_a + delta/2 +- Delta_E/2.  Right vectors [A+-, 4g]/S+- with
// A+- = 2*delta - 2i*gamma +- 2*Delta_E and S+- the Euclidean norm; left rows reuse
// the same components and are then rescaled so <l_n, r_n> = 1 exactly (skipped at
// an EP, where the inversion is undefined and at_ep is set instead).
inline EigenSystem eigensystem(const ParamPoint& p, double omega_a = 0.0,
                               const BranchConvention& branch = {}) {
  EigenSystem es;
  es.delta_e = energy_splitting(p, branch);
  const double mean = omega_a + 0.5 * p.delta;
  es.e_plus = mean + 0.5 * es.delta_e;
  es.e_minus = mean - 0.5 * es.delta_e;
  es.at_ep = is_ep(p);

  if (p.g == 0.0) {
    // Diagonal H: basis vectors are exact eigenvectors; match them to E+- via the
    // diagonal entries (the generic [A+-, 4g] form degenerates to 0/0 here).
    const Complex h00(omega_a + p.delta, -0.5 * p.gamma), h11(omega_a, 0.5 * p.gamma);
    const bool first_is_plus = std::norm(h00 - es.e_plus) <= std::norm(h11 - es.e_plus);
    const Vec2 e0{Complex(1.0, 0.0), Complex(0.0, 0.0)};
    const Vec2 e1{Complex(0.0, 0.0), Complex(1.0, 0.0)};
    es.r_plus = first_is_plus ? e0 : e1;
    es.r_minus = first_is_plus ? e1 : e0;
    es.l_plus = es.r_plus;
    es.l_minus = es.r_minus;  // <l_n, r_n> = 1 exactly
    return es;
  }

  // A+- = 2*delta - 2i*gamma +- 2*Delta_E obey A+ A- = -16 g^2 exactly.  The
  // smaller of the two suffers catastrophic cancellation when |g| is small, so
  // compute the larger one directly and recover the other from the product
  // identity (the usual stable-quadratic-root trick); this keeps eigenvector
  // residuals and biorthogonality at machine precision for all couplings.
  const Complex a_common(2.0 * p.delta, -2.0 * p.gamma);
  const Complex sum = a_common + 2.0 * es.delta_e;
  const Complex diff = a_common - 2.0 * es.delta_e;
  const double g2 = -16.0 * p.g * p.g;
  Complex a_plus, a_minus;
  if (std::norm(sum) >= std::norm(diff)) {
    a_plus = sum;
    a_minus = g2 / a_plus;
  } else {
    a_minus = diff;
    a_plus = g2 / a_minus;
  }
  const double fg = 4.0 * p.g;
  const double s_plus = std::sqrt(std::norm(a_plus) + fg * fg);
  const double s_minus = std::sqrt(std::norm(a_minus) + fg * fg);
  es.r_plus = {a_plus / s_plus, Complex(fg, 0.0) / s_plus};
  es.r_minus = {a_minus / s_minus, Complex(fg, 0.0) / s_minus};
  es.l_plus = es.r_plus;
  es.l_minus = es.r_minus;
  if (!es.at_ep) {
    // A+ A- = -16 g^2 != 0 away from g = 0, so both pairings are nonzero here.
    const Complex bp = apply_left(es.l_plus, es.r_plus);
    const Complex bm = apply_left(es.l_minus, es.r_minus);
    es.l_plus = {es.l_plus[0] / bp, es.l_plus[1] / bp};
    es.l_minus = {es.l_minus[0] / bm, es.l_minus[1] / bm};
  }
  return es;
}

// Relabels candidate so its splitting continues previous's branch; throws
// AmbiguousContinuation when the two labelings are exactly equidistant
// (an exact EP crossing between samples).
inline EigenSystem relabel_continuous(const EigenSystem& previous, EigenSystem candidate) {
  const double keep = std::norm(candidate.delta_e - previous.delta_e);
  const double flip = std::norm(-candidate.delta_e - previous.delta_e);
  if (keep == flip) throw AmbiguousContinuation();
  if (flip < keep) {
    std::swap(candidate.e_plus, candidate.e_minus);
    candidate.delta_e = -candidate.delta_e;
    std::swap(candidate.r_plus, candidate.r_minus);
    std::swap(candidate.l_plus, candidate.l_minus);
  }
  return candidate;
}

}  // namespace eploom
