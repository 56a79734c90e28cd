#include <doctest.h>

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "iontrap/constants.hpp"
#include "iontrap/harmonics.hpp"
#include "iontrap/rng.hpp"
#include "iontrap/species.hpp"

using namespace iontrap;

namespace {

const std::array<std::pair<int, int>, 8> kHarmonics = {{{1, -1},
                                                        {1, 0},
                                                        {1, 1},
                                                        {2, -2},
                                                        {2, -1},
                                                        {2, 0},
                                                        {2, 1},
                                                        {2, 2}}};

} // namespace

TEST_CASE("harmonics are orthonormal on the unit sphere") {
  Rng rng(42);
  const int samples = 200000;
  Eigen::Matrix<double, 8, 8> gram = Eigen::Matrix<double, 8, 8>::Zero();
  for (int s = 0; s < samples; ++s) {
    Eigen::Vector3d u(rng.normal(), rng.normal(), rng.normal());
    u.normalize();
    Eigen::Matrix<double, 8, 1> y;
    for (int i = 0; i < 8; ++i)
      y[i] = evaluate_harmonic(kHarmonics[i].first, kHarmonics[i].second, u);
    gram += y * y.transpose();
  }
  gram *= 4.0 * kPi / samples;
  for (int i = 0; i < 8; ++i) {
    CHECK(gram(i, i) == doctest::Approx(1.0).epsilon(0.03));
    for (int j = 0; j < i; ++j)
      CHECK(std::abs(gram(i, j)) < 0.02);
  }
}

TEST_CASE("degree-2 harmonics satisfy the Laplace equation") {
  Rng rng(1);
  const double h = 1e-3;
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Vector3d p(rng.uniform(-1, 1), rng.uniform(-1, 1),
                            rng.uniform(-1, 1));
    for (const auto &[l, n] : kHarmonics) {
      double lap = 0;
      for (int axis = 0; axis < 3; ++axis) {
        Eigen::Vector3d dp = Eigen::Vector3d::Zero();
        dp[axis] = h;
        lap += evaluate_harmonic(l, n, p + dp) +
               evaluate_harmonic(l, n, p - dp) -
               2 * evaluate_harmonic(l, n, p);
      }
      CHECK(std::abs(lap) / (h * h) < 1e-9);
    }
  }
}

TEST_CASE("multipole matrix form round-trips and stays traceless") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    MultipoleVector m;
    for (int i = 0; i < 8; ++i)
      m[i] = rng.uniform(-1, 1) * (i < 3 ? 10 : 1e7);
    const auto [field, v] = multipole_to_matrix(m);
    CHECK(std::abs(v.trace()) < 1e-6 * v.cwiseAbs().maxCoeff());
    CHECK((v - v.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const MultipoleVector back = matrix_to_multipole(field, v);
    for (int i = 0; i < 8; ++i)
      CHECK(back[i] == doctest::Approx(m[i]).epsilon(1e-12));
  }
}

TEST_CASE("quadrupole matrix matches the harmonic expansion pointwise") {
  Rng rng(3);
  const double scale[5] = {std::sqrt(15.0 / kPi),
                           std::sqrt(15.0 / kPi),
                           0.5 * std::sqrt(5.0 / kPi),
                           std::sqrt(15.0 / kPi),
                           0.5 * std::sqrt(15.0 / kPi)};
  for (int trial = 0; trial < 20; ++trial) {
    MultipoleVector m;
    for (int i = 3; i < 8; ++i)
      m[i] = rng.uniform(-1, 1);
    const auto [field, v] = multipole_to_matrix(m);
    const Eigen::Vector3d p(rng.uniform(-1, 1), rng.uniform(-1, 1),
                            rng.uniform(-1, 1));
    const double quad_direct = 0.5 * p.dot(v * p);
    double quad_harm = 0;
    for (int i = 3; i < 8; ++i)
      quad_harm += m[i] / scale[i - 3] *
                   evaluate_harmonic(2, kHarmonics[i].second, p);
    CHECK(quad_direct == doctest::Approx(quad_harm).epsilon(1e-12));
    CHECK(field == Eigen::Vector3d(m.f11, m.f1m1, m.f10));
  }
}

TEST_CASE("potential gradient and hessian match finite differences") {
  Rng rng(4);
  const std::vector<IonSpecies> pair = {ca40(), sr88()};
  TrapPotential trap;
  trap.rf.gradient_norm_sq = 1e19;
  trap.dc.q20 = 2e7;
  trap.dc.q22 = -5e6;
  trap.dc.q2m2 = 1e6;
  trap.dc.q2m1 = -2e6;
  trap.dc.q21 = 3e6;
  trap.dc.f1m1 = 5;
  trap.dc.f10 = -3;
  trap.dc.f11 = 7;

  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd x(6);
    for (int i = 0; i < 6; ++i)
      x[i] = rng.uniform(-2e-6, 2e-6);
    x[2] -= 3e-6;
    x[5] += 3e-6;

    const Eigen::VectorXd g = potential_gradient(x, pair, trap);
    const Eigen::MatrixXd h = potential_hessian(x, pair, trap);
    const double step = 1e-10;
    for (int j = 0; j < 6; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += step;
      xm[j] -= step;
      const double gfd = (potential_energy(xp, pair, trap) -
                          potential_energy(xm, pair, trap)) /
                         (2 * step);
      CHECK(g[j] == doctest::Approx(gfd).epsilon(1e-5));
      const Eigen::VectorXd hfd = (potential_gradient(xp, pair, trap) -
                                   potential_gradient(xm, pair, trap)) /
                                  (2 * step);
      for (int i = 0; i < 6; ++i)
        CHECK(h(i, j) ==
              doctest::Approx(hfd[i]).epsilon(1e-4).scale(
                  h.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("pseudopotential curvature agrees through both drive forms") {
  RfPseudoPotential rf;
  rf.gradient_norm_sq = 1.0e19;
  const IonSpecies s = ca40();
  const double direct = rf.curvature(s);
  const double kappa = rf.drive_curvature();
  const double via_kappa = s.charge * kappa * kappa /
                           (2.0 * s.mass * rf.drive_frequency *
                            rf.drive_frequency);
  CHECK(direct == doctest::Approx(via_kappa).epsilon(1e-14));
  CHECK(rf.stability_q(s) == doctest::Approx(2.0 * s.charge * kappa /
                                             (s.mass * rf.drive_frequency *
                                              rf.drive_frequency)));
}

TEST_CASE("working point reproduces the requested secular frequencies") {
  const Eigen::Vector3d omega = 2 * kPi *
                                Eigen::Vector3d(2.796e6, 3.499e6, 1.257e6);
  const TrapPotential trap =
      trap_from_secular_frequencies(ca40(), omega, 2 * kPi * 30e6);
  const IonSpecies s = ca40();
  const Eigen::Matrix3d v = trap.curvature(s);
  CHECK(std::abs(v(0, 1)) + std::abs(v(0, 2)) + std::abs(v(1, 2)) == 0.0);
  for (int i = 0; i < 3; ++i) {
    const double w = std::sqrt(s.charge * v(i, i) / s.mass);
    CHECK(w == doctest::Approx(omega[i]).epsilon(1e-9));
  }
  CHECK(trap.rf.stability_q(s) < 0.9);
  CHECK(trap.rf.stability_q(s) > 0.0);
}
