#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "iontrap/constants.hpp"
#include "iontrap/crystal.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/harmonics.hpp"
#include "iontrap/rng.hpp"
#include "iontrap/species.hpp"

using namespace iontrap;

namespace {

TrapPotential working_point() {
  return trap_from_secular_frequencies(
      ca40(), 2 * kPi * Eigen::Vector3d(2.796e6, 3.499e6, 1.257e6),
      2 * kPi * 30e6);
}

} // namespace

TEST_CASE("equal-species separation matches the closed form") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> pair = {ca40(), ca40()};
  const CrystalConfiguration eq = equilibrium_two_ion_analytic(trap, pair);

  const IonSpecies s = ca40();
  const double wz = 2 * kPi * 1.257e6;
  const double d =
      std::cbrt(2.0 * constants::coulomb_constant * s.charge * s.charge /
                (s.mass * wz * wz));
  CHECK(eq.separation() == doctest::Approx(d).epsilon(1e-10));
  CHECK(eq.position(0).x() == doctest::Approx(0.0).scale(1e-12));
  CHECK(eq.position(0).y() == doctest::Approx(0.0).scale(1e-12));
  CHECK(std::abs(eq.position(0).z()) == doctest::Approx(d / 2).epsilon(1e-10));
  CHECK(eq.position(1).z() == doctest::Approx(-eq.position(0).z()).epsilon(1e-10));
}

TEST_CASE("axial modes of an equal-species crystal") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> pair = {ca40(), ca40()};
  const CrystalConfiguration eq = equilibrium_two_ion_analytic(trap, pair);
  const ModeSpectrum sp = mode_spectrum(trap, eq);
  REQUIRE(sp.stable);
  REQUIRE(sp.frequencies.size() == 6);

  double wcom = 0, wstr = 0;
  for (std::size_t i = 0; i < sp.labels.size(); ++i) {
    if (sp.labels[i] == "z-com")
      wcom = sp.frequencies[static_cast<int>(i)];
    if (sp.labels[i] == "z-str")
      wstr = sp.frequencies[static_cast<int>(i)];
  }
  REQUIRE(wcom > 0);
  CHECK(wcom == doctest::Approx(2 * kPi * 1.257e6).epsilon(1e-9));
  CHECK(wstr / wcom == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("analytic equilibrium is a stationary point of the potential") {
  Rng rng(11);
  const std::vector<IonSpecies> caca = {ca40(), ca40()};
  const std::vector<IonSpecies> casr = {ca40(), sr88()};
  int found = 0;
  for (int trial = 0; trial < 40; ++trial) {
    TrapPotential trap = working_point();
    trap.dc.q2m2 = rng.uniform(-3e6, 3e6);
    trap.dc.q2m1 = rng.uniform(-3e6, 3e6);
    trap.dc.q21 = rng.uniform(-3e6, 3e6);
    trap.dc.q20 *= rng.uniform(0.6, 1.6);
    trap.dc.q22 *= rng.uniform(0.5, 1.5);
    trap.dc.f1m1 = rng.uniform(-20, 20);
    trap.dc.f10 = rng.uniform(-20, 20);
    trap.dc.f11 = rng.uniform(-20, 20);
    const auto &pair = trial % 2 ? casr : caca;
    CrystalConfiguration eq;
    try {
      eq = equilibrium_two_ion_analytic(trap, pair);
    } catch (const NumericalError &) {
      continue;
    }
    ++found;
    const Eigen::VectorXd g = potential_gradient(eq.positions, pair, trap);
    const double force_scale = ca40().charge * trap.dc.q20 * eq.separation();
    CHECK(g.cwiseAbs().maxCoeff() < 1e-9 * force_scale);
    CHECK(mode_spectrum(trap, eq).stable);
  }
  CHECK(found > 30);
}

TEST_CASE("analytic and numeric equilibria coincide") {
  Rng rng(12);
  const std::vector<IonSpecies> casr = {ca40(), sr88()};
  for (int trial = 0; trial < 10; ++trial) {
    TrapPotential trap = working_point();
    trap.dc.q2m2 = rng.uniform(-3e6, 3e6);
    trap.dc.q21 = rng.uniform(-3e6, 3e6);
    trap.dc.f11 = rng.uniform(-20, 20);
    trap.dc.f1m1 = rng.uniform(-20, 20);
    CrystalConfiguration a;
    try {
      a = equilibrium_two_ion_analytic(trap, casr);
    } catch (const NumericalError &) {
      continue;
    }
    Eigen::VectorXd guess = a.positions;
    for (int i = 0; i < 6; ++i)
      guess[i] += rng.uniform(-2e-7, 2e-7);
    const CrystalConfiguration n = equilibrium_numeric(trap, casr, guess);
    CHECK((a.positions - n.positions).norm() < 1e-12);
  }
}

TEST_CASE("simultaneous diagonalization satisfies both congruences") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Matrix<double, 6, 6> v = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix3d a, b, c;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        a(i, j) = rng.uniform(-1, 1);
        b(i, j) = rng.uniform(-1, 1);
        c(i, j) = rng.uniform(-1, 1);
      }
    a = (a + a.transpose()).eval();
    b = (b + b.transpose()).eval();
    a += 4 * Eigen::Matrix3d::Identity();
    b += 4 * Eigen::Matrix3d::Identity();
    v.topLeftCorner<3, 3>() = a;
    v.bottomRightCorner<3, 3>() = b;
    v.topRightCorner<3, 3>() = 0.1 * c;
    v.bottomLeftCorner<3, 3>() = 0.1 * c.transpose();

    const CongruenceTransform t = simultaneous_diagonalize(v);
    Eigen::Matrix<double, 6, 6> coul = Eigen::Matrix<double, 6, 6>::Zero();
    coul.topLeftCorner<3, 3>() = Eigen::Matrix3d::Identity();
    coul.bottomRightCorner<3, 3>() = Eigen::Matrix3d::Identity();
    coul.topRightCorner<3, 3>() = -Eigen::Matrix3d::Identity();
    coul.bottomLeftCorner<3, 3>() = -Eigen::Matrix3d::Identity();

    const Eigen::Matrix<double, 6, 6> tv =
        t.transform.transpose() * v * t.transform;
    const Eigen::Matrix<double, 6, 6> tc =
        t.transform.transpose() * coul * t.transform;
    Eigen::Matrix<double, 6, 6> want_c = Eigen::Matrix<double, 6, 6>::Zero();
    for (int i = 0; i < 3; ++i)
      want_c(i, i) = 2;
    CHECK((tv - Eigen::Matrix<double, 6, 6>(t.diagonal.asDiagonal()))
              .cwiseAbs()
              .maxCoeff() < 1e-9 * v.cwiseAbs().maxCoeff());
    CHECK((tc - want_c).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("mixed-species radial modes split away from the common value") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> casr = {ca40(), sr88()};
  const CrystalConfiguration eq = equilibrium_two_ion_analytic(trap, casr);
  const ModeSpectrum sp = mode_spectrum(trap, eq);
  REQUIRE(sp.stable);
  int radial = 0;
  for (const auto &label : sp.labels)
    if (label[0] == 'x' || label[0] == 'y')
      ++radial;
  CHECK(radial == 4);
  for (int i = 1; i < 6; ++i)
    CHECK(sp.frequencies[i] > sp.frequencies[i - 1]);
}
