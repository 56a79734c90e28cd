#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "iontrap/constants.hpp"
#include "iontrap/crystal.hpp"
#include "iontrap/dynamics.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/harmonics.hpp"
#include "iontrap/rotation.hpp"
#include "iontrap/species.hpp"

using namespace iontrap;

namespace {

TrapPotential working_point() {
  return trap_from_secular_frequencies(
      ca40(), 2 * kPi * Eigen::Vector3d(2.796e6, 3.499e6, 1.257e6),
      2 * kPi * 30e6);
}

DrivenPotential static_drive(const TrapPotential &trap, double duration) {
  DrivenPotential d;
  d.rf = trap.rf;
  d.sample_period = duration;
  d.samples.resize(8, 2);
  d.samples.col(0) = trap.dc.to_vector();
  d.samples.col(1) = trap.dc.to_vector();
  return d;
}

} // namespace

TEST_CASE("single-ion oscillation reproduces the secular period") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> one = {ca40()};

  SimulationConfig cfg;
  cfg.settle_time = 0;
  cfg.time_step = 2e-10;
  cfg.record_interval = 1e-9;
  Eigen::VectorXd x0(3);
  x0 << 0, 0, 50e-9;
  cfg.initial_position = x0;
  cfg.initial_velocity = Eigen::VectorXd::Zero(3);

  const Trajectory traj = simulate(static_drive(trap, 4e-6), one, cfg);

  // Count sign changes of z(t) and infer the period.
  int crossings = 0;
  double first = 0, last = 0;
  for (int i = 1; i < traj.times.size(); ++i) {
    if (traj.positions(2, i - 1) * traj.positions(2, i) < 0) {
      ++crossings;
      const double t = traj.times[i];
      if (crossings == 1)
        first = t;
      last = t;
    }
  }
  REQUIRE(crossings >= 3);
  const double period = 2 * (last - first) / (crossings - 1);
  CHECK(period == doctest::Approx(1.0 / 1.257e6).epsilon(1e-4));
}

TEST_CASE("energy is conserved in a static trap") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> pair = {ca40(), ca40()};
  const CrystalConfiguration eq = equilibrium_two_ion_analytic(trap, pair);

  SimulationConfig cfg;
  cfg.settle_time = 0;
  cfg.time_step = 2e-10;
  cfg.record_interval = 5e-7;
  Eigen::VectorXd x0 = eq.positions;
  x0[2] -= 5e-8;
  x0[5] += 5e-8;
  cfg.initial_position = x0;
  cfg.initial_velocity = Eigen::VectorXd::Zero(6);

  const Trajectory traj = simulate(static_drive(trap, 100e-6), pair, cfg);
  const double e0 = crystal_energy(trap, pair, traj.initial_position,
                                   traj.initial_velocity);
  const double e_eq =
      crystal_energy(trap, pair, eq.positions, Eigen::VectorXd::Zero(6));
  double worst = 0;
  for (int i = 0; i < traj.times.size(); ++i) {
    const double e = crystal_energy(trap, pair, traj.positions.col(i),
                                    traj.velocities.col(i));
    worst = std::max(worst, std::abs(e - e0) / (e0 - e_eq));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("zero-length drive reports zero heating") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> pair = {ca40(), ca40()};

  MultipoleSequence seq;
  seq.schedule.angles = Eigen::VectorXd::Zero(1);
  seq.schedule.sample_period = 5e-7;
  seq.steps = {trap.dc};

  SimulationConfig cfg;
  cfg.settle_time = 10e-6;
  const Trajectory traj = simulate(seq, pair, trap.rf, cfg);
  const HeatingResult hr = mode_energy(traj);
  REQUIRE(hr.delta_n.size() == 6);
  CHECK(hr.delta_n.cwiseAbs().maxCoeff() < 1e-6);
  CHECK_FALSE(hr.success);
  CHECK(hr.final_order.size() == 2);
}

TEST_CASE("escaping ions raise an ion-loss error") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> pair = {ca40(), ca40()};

  SimulationConfig cfg;
  cfg.settle_time = 30e-6;
  Eigen::VectorXd v0(6);
  v0 << 0, 0, 3e3, 0, 0, 3e3;
  cfg.initial_velocity = v0;
  CHECK_THROWS_AS(simulate(static_drive(trap, 1e-6), pair, cfg),
                  IonLossError);
}

TEST_CASE("designed rotation exchanges the ions with little heating") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> pair = {ca40(), ca40()};
  const MultipoleSequence seq =
      design_rotation(trap, pair, CostWeights{}, RotationSchedule::uniform(100));

  SimulationConfig cfg;
  const Trajectory traj = simulate(seq, pair, trap.rf, cfg);
  const HeatingResult hr = mode_energy(traj);
  CHECK(hr.success);
  CHECK(axial_heating(hr) < 5.0);
  CHECK(hr.peak_y_displacement < 5e-6);
  REQUIRE(hr.micromotion_trace.size() > 0);
  CHECK(hr.micromotion_trace.maxCoeff() < 5e-6);
}

TEST_CASE("full-rf mode stays near the pseudopotential equilibrium") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> one = {ca40()};

  SimulationConfig cfg;
  cfg.rf_mode = RfMode::full_rf;
  cfg.settle_time = 0;
  cfg.time_step = 2e-10;
  cfg.record_interval = 2e-9;
  Eigen::VectorXd x0(3);
  x0 << 30e-9, 0, 0;
  cfg.initial_position = x0;
  cfg.initial_velocity = Eigen::VectorXd::Zero(3);

  const Trajectory traj = simulate(static_drive(trap, 3e-6), one, cfg);
  double peak = 0;
  for (int i = 0; i < traj.times.size(); ++i)
    peak = std::max(peak, std::abs(traj.positions(0, i)));
  CHECK(peak >= 30e-9);
  CHECK(peak < 60e-9);
}

TEST_CASE("offset sweep keeps both starting orders at zero extra field") {
  const TrapPotential trap = working_point();
  const std::vector<IonSpecies> casr = {ca40(), sr88()};
  const MultipoleSequence seq = design_rotation(
      trap, casr, CostWeights{1.0, 0.1, 0.1, 1.0}, RotationSchedule::uniform(100));

  SimulationConfig cfg;
  const OffsetSweepResult res =
      offset_field_sweep(seq, casr, trap.rf, {0.0}, cfg);
  REQUIRE(res.outcomes.size() == 1);
  CHECK(res.initial_orders[0] != res.initial_orders[1]);
  const std::string regime = res.regime(0);
  CHECK(regime != "loss");
}
