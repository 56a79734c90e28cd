#pragma once

#include <Eigen/Dense>
#include <vector>

#include "iontrap/harmonics.hpp"
#include "iontrap/species.hpp"

namespace iontrap {

// Linear correction between commanded and realized multipoles:
// m = A m_set + b.
struct CalibrationMap {
  Eigen::Matrix<double, 8, 8> a = Eigen::Matrix<double, 8, 8>::Identity();
  Eigen::Matrix<double, 8, 1> b = Eigen::Matrix<double, 8, 1>::Zero();
  bool tilt_rows_zeroed = false;

  MultipoleVector apply(const MultipoleVector &set) const {
    return MultipoleVector::from_vector(a * set.to_vector() + b);
  }
};

// Single-ion observables for one multipole setting: secular frequencies
// paired with their principal axes, the equilibrium displacement, the
// micromotion index inferred from the out-of-plane displacement, and the
// probe-coupling ratios.
struct ObservableRecord {
  MultipoleVector setting;
  Eigen::Vector3d frequencies = Eigen::Vector3d::Zero(); // rad/s
  Eigen::Matrix3d axes = Eigen::Matrix3d::Identity();    // columns x',y',z'
  Eigen::Vector3d displacement = Eigen::Vector3d::Zero(); // m
  double micromotion_index = 0;                           // beta
  Eigen::Vector3d coupling_ratios = Eigen::Vector3d::Zero();
};

// Forward model for a single trapped ion. Axes are paired to the Cartesian
// axes by dominant component, signed so that component is positive, and
// completed right-handed (z' = x' cross y'). beta = |k| q_y u_y / 2; the
// coupling ratios are sqrt(hbar k^2 / 2 m omega_j) khat.ihat_j / rescaled
// by the carrier, i.e. eta_j (khat.ihat_j signed). Throws NumericalError
// on an unstable potential.
ObservableRecord predict_observables(const TrapPotential &trap,
                                     const Eigen::Vector3d &probe_k,
                                     const IonSpecies &species = ca40());

// Least-squares recovery of (A, b) from measured single-ion records:
// Gauss-Newton on residuals (frequency / 2 pi 1 kHz, axis components /
// 0.01, displacement / 0.1 um) starting from the identity map. With
// restrict_tilt the off-diagonals of the q2m2, q2m1 and q21 rows are held
// at zero. Throws ConfigError when the records leave the free parameters
// underdetermined.
CalibrationMap fit_calibration(const std::vector<ObservableRecord> &records,
                               const RfPseudoPotential &rf,
                               const Eigen::Vector3d &probe_k,
                               bool restrict_tilt = true,
                               const IonSpecies &species = ca40());

} // namespace iontrap
