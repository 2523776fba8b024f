#include <catch2/catch_amalgamated.hpp>
#include <complex>
#include <random>

#include "eploom/core.hpp"
#include "oracles.hpp"

using namespace eploom;
using Catch::Approx;

namespace {
ParamPoint random_point(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  return ParamPoint{u(rng), u(rng), u(rng)};
}

Complex mat_vec_residual(const Mat2& h, const Vec2& v, const Complex& e, int row) {
  return h[row][0] * v[0] + h[row][1] * v[1] - e * v[row];
}
}  // namespace

TEST_CASE("hamiltonian entries") {
  const Mat2 h = hamiltonian({0.3, 0.2, 0.5}, 1.0);
  CHECK(h[0][0] == Complex(1.3, -0.25));
  CHECK(h[0][1] == Complex(0.2, 0.0));
  CHECK(h[1][0] == Complex(0.2, 0.0));
  CHECK(h[1][1] == Complex(1.0, 0.25));
}

TEST_CASE("principal branch pins the splitting sign") {
  // delta = 0, g = 0.1, gamma = 0: radicand -0.16, splitting exactly -0.2.
  const Complex de = energy_splitting({0.0, 0.1, 0.0});
  CHECK(de.real() == Approx(-0.2).margin(1e-15));
  CHECK(de.imag() == Approx(0.0).margin(1e-15));
  // Same at the wider coupling used by the modulated-coupling preset at theta = 0.
  const Complex de2 = energy_splitting({0.0, 0.21, 0.0});
  CHECK(de2.real() == Approx(-0.42).margin(1e-15));
  CHECK(de2.imag() == Approx(0.0).margin(1e-15));
}

TEST_CASE("radicand closed form") {
  const ParamPoint p{0.3, 0.2, 0.5};
  const Complex w(2.0 * p.gamma, 2.0 * p.delta);
  CHECK(radicand(p) == w * w - 16.0 * p.g * p.g);
}

TEST_CASE("splitting squared equals the radicand up to the -1/4 factor") {
  std::mt19937 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const ParamPoint p = random_point(rng);
    const Complex de = energy_splitting(p);
    const Complex f = radicand(p);
    CHECK(std::abs(de * de + 0.25 * f) <= 1e-12 * std::max(1.0, std::abs(f)));
  }
}

TEST_CASE("signed zeros cannot flip the branch") {
  const Complex base = energy_splitting({0.0, 0.1, 0.0});
  CHECK(energy_splitting({-0.0, 0.1, 0.0}) == base);
  CHECK(energy_splitting({0.0, 0.1, -0.0}) == base);
  CHECK(energy_splitting({-0.0, 0.1, -0.0}) == base);
  // gamma of either sign with delta == 0 sits on the branch cut; both signs must
  // land on the same side (the radicand is even in gamma when delta == 0).
  CHECK(energy_splitting({0.0, 0.1, -0.15}) == energy_splitting({0.0, 0.1, 0.15}));
}

TEST_CASE("exceptional point detection") {
  CHECK(is_ep({0.0, 0.1, 0.2}));
  CHECK(is_ep({0.0, 0.1, -0.2}));
  CHECK(is_ep({0.0, 0.0, 0.0}));  // diabolic degeneracy of the zero coupling limit
  CHECK_FALSE(is_ep({0.0, 0.1, 0.0}));
  CHECK_FALSE(is_ep({0.01, 0.1, 0.2}));
  // The detector thresholds the SPLITTING magnitude: a parameter displacement eps
  // off the coalescence opens a splitting ~ sqrt(eps) (square-root amplification),
  // so nearby-but-distinct points are resolvable and only genuine coalescence
  // trips the default tolerance.  A caller-supplied coarse tolerance widens it.
  CHECK_FALSE(is_ep({0.0, 0.1, 0.2 + 1e-9}));
  CHECK(is_ep({0.0, 0.1, 0.2 + 1e-9}, 1e-3));
}

TEST_CASE("eigenvalues match a generic dense solver on random points") {
  std::mt19937 rng(12345);
  int tested = 0;
  double worst = 0.0;
  while (tested < 10000) {
    const ParamPoint p = random_point(rng);
    if (is_ep(p, 1e-6)) continue;
    const EigenSystem es = eigensystem(p, 0.25);
    const auto ora = oracles::eigenvalues(p, 0.25);
    worst = std::max(worst, oracles::set_distance({es.e_plus, es.e_minus}, ora));
    ++tested;
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("eigenvectors satisfy the eigenproblem, biorthonormality, completeness") {
  // Points with splitting below 1e-6 are excluded: there the biorthogonal
  // normalization 1/<l,r> ~ 1/splitting amplifies rounding beyond the 1e-12
  // bound checked here.  Above that margin the root-product construction keeps
  // every identity at machine precision.
  std::mt19937 rng(777);
  int tested = 0;
  while (tested < 10000) {
    const ParamPoint p = random_point(rng);
    if (is_ep(p, 1e-6)) continue;
    const Mat2 h = hamiltonian(p, 0.0);
    const EigenSystem es = eigensystem(p);
    REQUIRE_FALSE(es.at_ep);
    for (int row = 0; row < 2; ++row) {
      CHECK(std::abs(mat_vec_residual(h, es.r_plus, es.e_plus, row)) <= 1e-12);
      CHECK(std::abs(mat_vec_residual(h, es.r_minus, es.e_minus, row)) <= 1e-12);
    }
    CHECK(std::abs(apply_left(es.l_plus, es.r_plus) - 1.0) <= 1e-12);
    CHECK(std::abs(apply_left(es.l_minus, es.r_minus) - 1.0) <= 1e-12);
    CHECK(std::abs(apply_left(es.l_plus, es.r_minus)) <= 1e-12);
    CHECK(std::abs(apply_left(es.l_minus, es.r_plus)) <= 1e-12);
    // Completeness: sum_n r_n l_n^T = identity.
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const Complex s = es.r_plus[i] * es.l_plus[j] + es.r_minus[i] * es.l_minus[j];
        CHECK(std::abs(s - (i == j ? 1.0 : 0.0)) <= 1e-12);
      }
    ++tested;
  }
}

TEST_CASE("splitting is the plus-minus eigenvalue difference") {
  std::mt19937 rng(31);
  for (int i = 0; i < 1000; ++i) {
    const ParamPoint p = random_point(rng);
    const EigenSystem es = eigensystem(p, 0.4);
    CHECK(std::abs((es.e_plus - es.e_minus) - es.delta_e) <= 1e-14);
  }
}

TEST_CASE("offset invariance: omega_a shifts eigenvalues, nothing else") {
  std::mt19937 rng(55);
  for (int i = 0; i < 200; ++i) {
    const ParamPoint p = random_point(rng);
    if (is_ep(p, 1e-6)) continue;
    const EigenSystem a = eigensystem(p, 0.0);
    const EigenSystem b = eigensystem(p, 0.9);
    CHECK(std::abs(b.delta_e - a.delta_e) <= 1e-14);
    CHECK(std::abs((b.e_plus - a.e_plus) - 0.9) <= 1e-12);
    CHECK(std::abs((b.e_minus - a.e_minus) - 0.9) <= 1e-12);
    for (int k = 0; k < 2; ++k) {
      CHECK(std::abs(b.r_plus[k] - a.r_plus[k]) <= 1e-14);
      CHECK(std::abs(b.l_minus[k] - a.l_minus[k]) <= 1e-14);
    }
  }
}

TEST_CASE("decoupled limit: diagonal eigensystem matched by diagonal entries") {
  // g = 0: basis vectors are exact eigenvectors.
  const ParamPoint p{0.2, 0.0, 0.3};
  const EigenSystem es = eigensystem(p, 0.0);
  REQUIRE_FALSE(es.at_ep);
  const Mat2 h = hamiltonian(p);
  for (int row = 0; row < 2; ++row) {
    CHECK(std::abs(mat_vec_residual(h, es.r_plus, es.e_plus, row)) <= 1e-15);
    CHECK(std::abs(mat_vec_residual(h, es.r_minus, es.e_minus, row)) <= 1e-15);
  }
  CHECK(apply_left(es.l_plus, es.r_plus) == Complex(1.0, 0.0));
  CHECK(apply_left(es.l_minus, es.r_plus) == Complex(0.0, 0.0));
  CHECK(std::abs((es.e_plus - es.e_minus) - es.delta_e) <= 1e-15);
}

TEST_CASE("eigensystem at an exceptional point is flagged, not inverted") {
  const EigenSystem es = eigensystem({0.0, 0.1, 0.2});
  CHECK(es.at_ep);
  // Left vectors keep the raw (unrescaled) components at the EP.
  CHECK(std::abs(apply_left(es.l_plus, es.r_plus)) <= 1e-10);
}

TEST_CASE("branch continuation picks the nearer labeling") {
  const ParamPoint p{0.0, 0.1, 0.0};  // principal splitting -0.2
  BranchConvention keep{BranchMode::ContinuedFromPrevious, Complex(-0.19, 0.01)};
  CHECK(energy_splitting(p, keep) == energy_splitting(p));
  BranchConvention flip{BranchMode::ContinuedFromPrevious, Complex(0.19, -0.01)};
  CHECK(energy_splitting(p, flip) == -energy_splitting(p));
}

TEST_CASE("relabel_continuous swaps labels when the previous branch demands it") {
  const ParamPoint p{0.1, 0.2, 0.05};
  const EigenSystem prev = eigensystem(p);
  EigenSystem flipped_prev = prev;
  flipped_prev.delta_e = -prev.delta_e;

  const EigenSystem cand = eigensystem({0.11, 0.2, 0.05});
  const EigenSystem kept = relabel_continuous(prev, cand);
  CHECK(kept.delta_e == cand.delta_e);
  CHECK(kept.e_plus == cand.e_plus);

  const EigenSystem swapped = relabel_continuous(flipped_prev, cand);
  CHECK(swapped.delta_e == -cand.delta_e);
  CHECK(swapped.e_plus == cand.e_minus);
  CHECK(swapped.r_plus == cand.r_minus);
  CHECK(swapped.l_minus == cand.l_plus);
}

TEST_CASE("relabel_continuous refuses an exact tie") {
  const EigenSystem prev = eigensystem({0.0, 0.1, 0.0});
  EigenSystem cand = prev;
  cand.delta_e = Complex(0.0, 0.0);  // equidistant from +-previous
  CHECK_THROWS_AS(relabel_continuous(prev, cand), AmbiguousContinuation);
  EigenSystem orth = prev;
  orth.delta_e = Complex(0.0, 0.2);  // orthogonal: exactly equidistant as well
  CHECK_THROWS_AS(relabel_continuous(prev, orth), AmbiguousContinuation);
}
