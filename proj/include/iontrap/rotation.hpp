#pragma once

#include <Eigen/Dense>
#include <vector>

#include "iontrap/calibrate.hpp"
#include "iontrap/crystal.hpp"
#include "iontrap/electrodes.hpp"
#include "iontrap/filters.hpp"
#include "iontrap/harmonics.hpp"

namespace iontrap {

// Crystal-axis angles for one rotation: N+1 points from 0 to pi.
struct RotationSchedule {
  Eigen::VectorXd angles;      // rad, monotone, angles[0]=0, angles[N]=pi
  double sample_period = 5e-7; // s, spacing of the executed waveform

  int step_count() const { return static_cast<int>(angles.size()) - 1; }

  static RotationSchedule uniform(int steps, double sample_period = 5e-7);
};

// Weights of the per-step design cost: angle constraint, mode-degeneracy
// avoidance, overall stiffness, and staying near the initial spectrum.
struct CostWeights {
  double angle = 1.0;      // > 0
  double degeneracy = 0.0;
  double stiffness = 0.0;
  double drift = 1.0;
};

struct MultipoleSequence {
  std::vector<MultipoleVector> steps; // N+1 entries
  RotationSchedule schedule;
};

// Sine-series parametrization of a waveform over steps n = 0..N:
// m_n = a_0 + sum_p a_p sin(p pi n / N). Row p of `a` holds the 8-channel
// coefficient vector a_p.
struct WaveformParams {
  Eigen::MatrixXd a;           // (p_max+1) x 8
  int n_steps = 50;            // N
  double sample_period = 5e-7; // s
  Eigen::Matrix<double, 8, 1> fit_residuals =
      Eigen::Matrix<double, 8, 1>::Zero(); // RMS / channel range, from fits

  int p_max() const { return static_cast<int>(a.rows()) - 1; }
};

// Designs the multipole sequence rotating a two-ion crystal through the
// schedule: per step, a Levenberg-Marquardt solve over the 8 potential
// coefficients drives the ion-pair axis onto the target angle (hard, axis
// residual must reach |u x t|^2 < 1e-8), keeps the crystal midpoint on the
// trap site, and trades off the weighted spectral terms. Steps are
// warm-started from their predecessor; equal-mass pairs are seeded with
// the exactly rotated potential tensor. If any channel jumps by more than
// 5% of its range between consecutive steps the design is redone with the
// schedule refined (up to 3 doublings); the returned schedule reflects
// this. Throws NumericalError naming the step on failure.
MultipoleSequence design_rotation(const TrapPotential &trap0,
                                  const std::vector<IonSpecies> &species,
                                  const CostWeights &weights,
                                  const RotationSchedule &schedule);

// Per-channel least squares onto {1, sin(p pi n / N)}; fit_residuals get
// the per-channel RMS misfit over the channel's range (0 for constant
// channels).
WaveformParams fourier_fit(const MultipoleSequence &seq, int p_max);

MultipoleSequence params_to_sequence(const WaveformParams &params);

// Finds set-coefficients whose image under the full chain (voltage solve,
// filter network, multipole re-expansion, calibration) matches the desired
// waveform, holding a settle tail at a_0 after the sequence. a_0 of the
// result is fixed at A^{-1}(a_0,desired - b); the sine coefficients up to
// p_max_out are solved as one linear least-squares problem through the
// simulated chain. Throws ConfigError if the required electrode voltages
// exceed the clamp.
WaveformParams precompensate(const WaveformParams &desired,
                             const LinearStateModel &filter_model,
                             const CalibrationMap &cal,
                             const MultipoleMatrix &mm, int p_max_out = 12,
                             int settle_steps = 40, double clamp = 40.0);

} // namespace iontrap
