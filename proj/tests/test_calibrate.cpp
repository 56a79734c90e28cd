#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "iontrap/calibrate.hpp"
#include "iontrap/constants.hpp"
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

Eigen::Vector3d probe_direction() {
  return (2 * kPi / 729e-9) * Eigen::Vector3d(1, 1, 1).normalized();
}

} // namespace

TEST_CASE("single-ion observables at the working point") {
  const TrapPotential trap = working_point();
  const ObservableRecord r = predict_observables(trap, probe_direction());

  CHECK(r.frequencies[0] == doctest::Approx(2 * kPi * 2.796e6).epsilon(1e-9));
  CHECK(r.frequencies[1] == doctest::Approx(2 * kPi * 3.499e6).epsilon(1e-9));
  CHECK(r.frequencies[2] == doctest::Approx(2 * kPi * 1.257e6).epsilon(1e-9));
  CHECK((r.axes - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(r.displacement.norm() < 1e-12);
  CHECK(r.micromotion_index == doctest::Approx(0.0).scale(1e-6));
  CHECK(r.axes.determinant() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("displaced ion picks up micromotion along the rf direction") {
  TrapPotential trap = working_point();
  trap.dc.f1m1 = 20.0;
  const ObservableRecord r = predict_observables(trap, probe_direction());
  CHECK(std::abs(r.displacement.y()) > 1e-8);
  const double beta = probe_direction().norm() *
                      trap.rf.stability_q(ca40()) *
                      std::abs(r.displacement.y()) / 2.0;
  CHECK(r.micromotion_index == doctest::Approx(beta).epsilon(1e-6));
}

TEST_CASE("axis tilt follows a cross quadrupole") {
  TrapPotential trap = working_point();
  trap.dc.q21 = 2e6;
  const ObservableRecord r = predict_observables(trap, probe_direction());
  CHECK(std::abs(r.axes(2, 0)) > 1e-3);
  for (int j = 0; j < 3; ++j)
    CHECK(r.axes(j, j) > 0.9);
}

TEST_CASE("frequencies match the curvature eigenvalues") {
  Rng rng(31);
  const IonSpecies s = ca40();
  for (int trial = 0; trial < 10; ++trial) {
    TrapPotential trap = working_point();
    trap.dc.q20 *= rng.uniform(0.9, 1.1);
    trap.dc.q22 *= rng.uniform(0.9, 1.1);
    trap.dc.q2m2 = rng.uniform(-1e6, 1e6);
    trap.dc.q21 = rng.uniform(-1e6, 1e6);
    trap.dc.q2m1 = rng.uniform(-1e6, 1e6);
    const ObservableRecord r = predict_observables(trap, probe_direction());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(trap.curvature(s));
    Eigen::Vector3d want;
    for (int i = 0; i < 3; ++i)
      want[i] = std::sqrt(s.charge * es.eigenvalues()[i] / s.mass);
    std::sort(want.data(), want.data() + 3);
    Eigen::Vector3d got = r.frequencies;
    std::sort(got.data(), got.data() + 3);
    for (int i = 0; i < 3; ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
  }
}

TEST_CASE("identity map is recovered from clean records") {
  const TrapPotential trap = working_point();
  Rng rng(32);
  std::vector<ObservableRecord> records;
  while (records.size() < 25) {
    MultipoleVector set = trap.dc;
    set.q20 *= rng.uniform(0.85, 1.15);
    set.q22 *= rng.uniform(0.85, 1.15);
    set.q2m2 = rng.uniform(-2e6, 2e6);
    set.q2m1 = rng.uniform(-2e6, 2e6);
    set.q21 = rng.uniform(-2e6, 2e6);
    set.f1m1 = rng.uniform(-10, 10);
    set.f10 = rng.uniform(-10, 10);
    set.f11 = rng.uniform(-10, 10);
    TrapPotential t = trap;
    t.dc = set;
    try {
      ObservableRecord r = predict_observables(t, probe_direction());
      r.setting = set;
      records.push_back(r);
    } catch (const NumericalError &) {
    }
  }
  const CalibrationMap fit =
      fit_calibration(records, trap.rf, probe_direction(), true);
  CHECK((fit.a - Eigen::Matrix<double, 8, 8>::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-6);
  for (int i = 0; i < 8; ++i) {
    const double scale = i < 3 ? 10.0 : 2e7;
    CHECK(std::abs(fit.b[i]) < 1e-6 * scale);
  }
}

TEST_CASE("a diagonal gain error is recovered from clean records") {
  const TrapPotential trap = working_point();
  CalibrationMap hidden;
  hidden.a(3, 3) = 1.04;
  hidden.a(5, 5) = 0.97;
  hidden.a(7, 7) = 1.02;
  hidden.a(0, 0) = 0.95;
  hidden.b[2] = 0.5;
  hidden.b[5] = 3e5;

  Rng rng(33);
  std::vector<ObservableRecord> records;
  while (records.size() < 30) {
    MultipoleVector set = trap.dc;
    set.q20 *= rng.uniform(0.85, 1.15);
    set.q22 *= rng.uniform(0.85, 1.15);
    set.q2m2 = rng.uniform(-2e6, 2e6);
    set.q2m1 = rng.uniform(-2e6, 2e6);
    set.q21 = rng.uniform(-2e6, 2e6);
    set.f1m1 = rng.uniform(-10, 10);
    set.f10 = rng.uniform(-10, 10);
    set.f11 = rng.uniform(-10, 10);
    TrapPotential t = trap;
    t.dc = hidden.apply(set);
    try {
      ObservableRecord r = predict_observables(t, probe_direction());
      r.setting = set;
      records.push_back(r);
    } catch (const NumericalError &) {
    }
  }
  const CalibrationMap fit =
      fit_calibration(records, trap.rf, probe_direction(), true);
  CHECK(std::abs(fit.a(3, 3) - 1.04) < 1e-4);
  CHECK(std::abs(fit.a(5, 5) - 0.97) < 1e-4);
  CHECK(std::abs(fit.a(7, 7) - 1.02) < 1e-4);
  CHECK(std::abs(fit.a(0, 0) - 0.95) < 1e-4);
  CHECK(std::abs(fit.b[2] - 0.5) < 1e-3);
  CHECK(std::abs(fit.b[5] - 3e5) < 1e3);
}

TEST_CASE("unstable settings are rejected") {
  TrapPotential trap = working_point();
  trap.dc.q20 = -5e7;
  CHECK_THROWS_AS(predict_observables(trap, probe_direction()),
                  NumericalError);
}
