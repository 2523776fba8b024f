#pragma once
#include <cmath>
#include <optional>

#include "eploom/core.hpp"
#include "eploom/errors.hpp"

// Closed parameter loops theta -> (delta, g, gamma) with theta = +-omega*t:
//   delta(theta) = Delta0 * sin(theta)
//   g(theta)     = g0 + G0 * cos(theta)          (unless g_modulated is false)
//   gamma(theta) = Gamma0 * sin^2(theta/2)       (unless gamma_const is set)

namespace eploom {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kDefaultOmega = 0.05;

enum class Direction { CCW, CW };

struct LoopSpec {
  double delta0 = 0.0;
  double g0 = 0.0;
  double G0 = 0.0;
  double Gamma0 = 0.0;
  double omega = kDefaultOmega;  // angular speed, > 0
  double omega_a = 0.0;          // uniform level offset
  Direction direction = Direction::CCW;
  int cycles = 1;
  // Structural switches for the preset family: when g_modulated is false the loop
  // ignores G0 entirely (g == g0, d g/d G0 == 0); when gamma_const is set the loop
  // ignores Gamma0 (gamma == *gamma_const, d gamma/d Gamma0 == 0).  These make the
  // sensing selectivity identities exact rather than numerically small.
  bool g_modulated = true;
  std::optional<double> gamma_const{};
};

inline double theta_sign(const LoopSpec& l) {
  return l.direction == Direction::CCW ? 1.0 : -1.0;
}
inline double period(const LoopSpec& l) { return kTwoPi / l.omega; }
inline double total_time(const LoopSpec& l) { return period(l) * l.cycles; }
// theta(t): CCW 0 -> +2*pi*cycles, CW 0 -> -2*pi*cycles, both with forward time.
inline double theta_at(const LoopSpec& l, double t) { return theta_sign(l) * l.omega * t; }

inline ParamPoint param_at(const LoopSpec& l, double theta) {
  ParamPoint p;
  p.delta = l.delta0 * std::sin(theta);
  p.g = l.g0 + (l.g_modulated ? l.G0 * std::cos(theta) : 0.0);
  if (l.gamma_const) {
    p.gamma = *l.gamma_const;
  } else {
    const double sh = std::sin(0.5 * theta);
    p.gamma = l.Gamma0 * sh * sh;
  }
  return p;
}

// Template derivatives used by the analytic susceptibilities.
inline double dg_dG0(const LoopSpec& l, double theta) {
  return l.g_modulated ? std::cos(theta) : 0.0;
}
inline double dgamma_dGamma0(const LoopSpec& l, double theta) {
  if (l.gamma_const) return 0.0;
  const double sh = std::sin(0.5 * theta);
  return sh * sh;
}
inline double ddelta_dDelta0(const LoopSpec& /*l*/, double theta) { return std::sin(theta); }

inline LoopSpec preset(int id) {
  LoopSpec l;
  switch (id) {
    case 1:
      l.delta0 = 0.0;
      l.g0 = 0.01;
      l.G0 = 0.2;
      l.Gamma0 = 0.2;
      break;
    case 2:
      l.delta0 = 0.04;
      l.g0 = 0.1;
      l.G0 = 0.0;
      l.Gamma0 = 0.1;
      l.g_modulated = false;  // g is G0-independent on this trajectory
      break;
    case 3:
      l.delta0 = 0.2;
      l.g0 = 0.2;
      l.G0 = 0.2;
      l.Gamma0 = 0.0;
      l.gamma_const = 0.1;  // constant gain/loss override
      break;
    default:
      throw ConfigError("invalid preset id");
  }
  return l;
}

enum class PerturbTarget { G0, Gamma0, Delta0 };

// Actual amplitude = x_ideal + lambda (deviation from the ideal working point).
struct PerturbationSpec {
  PerturbTarget target = PerturbTarget::G0;
  double lambda = 0.0;
  double x_ideal = 0.0;
};

inline LoopSpec apply_perturbation(LoopSpec loop, const PerturbationSpec& pert) {
  const double value = pert.x_ideal + pert.lambda;
  switch (pert.target) {
    case PerturbTarget::G0:
      loop.G0 = value;
      break;
    case PerturbTarget::Gamma0:
      loop.Gamma0 = value;
      break;
    case PerturbTarget::Delta0:
      loop.delta0 = value;
      break;
  }
  return loop;
}

}  // namespace eploom
