#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iontrap/crystal.hpp"
#include "iontrap/electrodes.hpp"
#include "iontrap/filters.hpp"
#include "iontrap/harmonics.hpp"
#include "iontrap/rotation.hpp"
#include "iontrap/species.hpp"

namespace iontrap {

enum class RfMode { pseudopotential, full_rf };

struct SimulationConfig {
  RfMode rf_mode = RfMode::pseudopotential;
  double time_step = 0;       // s; <= 0 picks 1/72 of the fastest period
  double settle_time = 20e-6; // s, holding the final potential
  double escape_radius = 100e-6; // m
  double record_interval = 0;    // s between stored samples; <= 0 auto

  bool thermal_init = false; // thermal mode amplitudes instead of rest
  double temperature = 0;    // K
  std::uint64_t seed = 0;

  // Override the equilibrium-at-rest start (stacked 3N coordinates).
  std::optional<Eigen::VectorXd> initial_position;
  std::optional<Eigen::VectorXd> initial_velocity;
};

// Time-dependent multipole drive: columns are samples spaced sample_period
// apart, linearly interpolated and held constant beyond the last sample.
struct DrivenPotential {
  Eigen::Matrix<double, 8, Eigen::Dynamic> samples;
  double sample_period = 5e-7;
  RfPseudoPotential rf;

  double duration() const {
    return samples.cols() > 1 ? (samples.cols() - 1) * sample_period : 0.0;
  }
  TrapPotential at(double t) const;

  static DrivenPotential from_sequence(const MultipoleSequence &seq,
                                       const RfPseudoPotential &rf);
};

// Commanded electrode voltages propagated through the filter model and
// mapped back to realized multipoles on a grid of `substeps` points per
// input sample, with the last input held for `settle_steps` extra samples.
// The calibration gain acts on the reconstructed multipoles; its offset is
// added afterwards.
DrivenPotential realized_drive(const Eigen::MatrixXd &voltage_samples,
                               double sample_period,
                               const LinearStateModel &filter,
                               const MultipoleMatrix &mm,
                               const CalibrationMap &cal,
                               const RfPseudoPotential &rf, int substeps,
                               int settle_steps);

// Same chain with the dense-output propagator precomputed once; `offset`
// is the calibration offset added to every reconstructed multipole column.
DrivenPotential realized_drive(const Eigen::MatrixXd &voltage_samples,
                               const DenseOutputModel &dom,
                               const Eigen::Matrix<double, 8, 1> &offset,
                               const RfPseudoPotential &rf, int settle_steps);

struct Trajectory {
  std::vector<IonSpecies> species;
  RfPseudoPotential rf;
  RfMode rf_mode = RfMode::pseudopotential;
  double time_step = 0;

  MultipoleVector start_multipoles, end_multipoles;

  Eigen::VectorXd times;      // recorded sample times
  Eigen::MatrixXd positions;  // 3N x samples
  Eigen::MatrixXd velocities; // 3N x samples

  Eigen::VectorXd initial_position, initial_velocity;
  Eigen::VectorXd final_position, final_velocity;
  double final_time = 0;

  int ion_count() const { return static_cast<int>(species.size()); }
};

struct HeatingResult {
  std::vector<std::string> mode_labels;
  Eigen::VectorXd delta_n; // phonon quanta gained per mode
  bool success = false;
  std::vector<std::string> final_order; // species labels by increasing z
  double peak_y_displacement = 0;       // m
  Eigen::VectorXd micromotion_times;
  Eigen::VectorXd micromotion_trace; // worst-ion micromotion amplitude, m
};

// Integrates the classical motion through the drive plus settle time with
// velocity Verlet. Pseudopotential mode uses the time-averaged RF
// confinement; full-RF mode applies the instantaneous quadrupole drive.
// Throws IonLossError when an ion leaves the escape radius.
Trajectory simulate(const DrivenPotential &drive,
                    const std::vector<IonSpecies> &species,
                    const SimulationConfig &cfg);

Trajectory simulate(const MultipoleSequence &seq,
                    const std::vector<IonSpecies> &species,
                    const RfPseudoPotential &rf, const SimulationConfig &cfg);

Trajectory simulate(const Eigen::MatrixXd &voltage_samples,
                    double sample_period, const MultipoleMatrix &mm,
                    const std::vector<IonSpecies> &species,
                    const RfPseudoPotential &rf, const SimulationConfig &cfg);

// Projects the start and end states onto the normal modes of the (static)
// end potential and reports the energy gained per mode in phonon quanta,
// plus rotation outcome, ordering and micromotion exposure. Requires the
// drive to end where it started; otherwise the modes are ill-defined and a
// longer settle time (or a sequence returning to its start) is needed.
HeatingResult mode_energy(const Trajectory &traj,
                          const CrystalConfiguration &equilibrium,
                          const ModeSpectrum &spectrum,
                          double angle_tolerance = 0.3);

HeatingResult mode_energy(const Trajectory &traj,
                          double angle_tolerance = 0.3);

// Sum of the axial (z-labeled) mode gains; the optimizer's objective.
double axial_heating(const HeatingResult &result);

// Total mechanical energy (J) of a state under a static potential.
double crystal_energy(const TrapPotential &trap,
                      const std::vector<IonSpecies> &species,
                      const Eigen::VectorXd &position,
                      const Eigen::VectorXd &velocity);

struct OffsetSweepResult {
  std::vector<double> e_x; // V/m
  std::array<std::string, 2> initial_orders;
  // outcomes[i][j]: final order (or "loss") at e_x[i] from initial_orders[j]
  std::vector<std::array<std::string, 2>> outcomes;

  // "always <order>", "bidirectional", "loss" or "mixed" per field value
  std::string regime(int i) const;
};

// Runs the sequence with a uniform extra field E_x added, from both initial
// ion orders, and records the final ordering.
OffsetSweepResult offset_field_sweep(const MultipoleSequence &seq,
                                     const std::vector<IonSpecies> &species,
                                     const RfPseudoPotential &rf,
                                     const std::vector<double> &e_x_values,
                                     const SimulationConfig &cfg);

} // namespace iontrap
