#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "iontrap/harmonics.hpp"
#include "iontrap/species.hpp"

namespace iontrap {

struct CrystalConfiguration {
  std::vector<IonSpecies> species;
  Eigen::VectorXd positions; // stacked (x,y,z) per ion, m

  int ion_count() const { return static_cast<int>(species.size()); }

  Eigen::Vector3d position(int i) const { return positions.segment<3>(3 * i); }

  double separation() const; // two-ion distance
};

struct ModeSpectrum {
  // Ascending; an unstable direction contributes -sqrt(-eigenvalue) so the
  // magnitude still carries the curvature scale.
  Eigen::VectorXd frequencies; // rad/s
  // Columns; orthonormal eigenvectors of the mass-corrected Hessian
  // H~ = D^{-1} H D^{-1}, D = diag(sqrt(m_i)) per coordinate.
  Eigen::MatrixXd mode_vectors;
  // Dominant axis plus, for two ions, whether the ions move together or
  // against each other: "z-com", "x-str", ... Single ion: "x", "y", "z".
  std::vector<std::string> labels;
  bool stable = true;
};

struct CongruenceTransform {
  Eigen::Matrix<double, 6, 6> transform; // M
  Eigen::Matrix<double, 6, 1> diagonal;  // v'
};

// Finds M with M^T V M = diag(v') and M^T C M = 2 diag(1,1,1,0,0,0), where
// C = [[I,-I],[-I,I]] is the quadratic part of the expanded two-ion Coulomb
// term. Throws NumericalError when V is singular on the null space of C
// (the center-of-mass block).
CongruenceTransform
simultaneous_diagonalize(const Eigen::Matrix<double, 6, 6> &v);

// Damped Newton on the potential gradient with backtracking line search;
// non-descent Newton steps fall back to scaled gradient descent. Converges
// to a stationary point of the potential; check mode_spectrum().stable for
// minimality. Throws NumericalError when the gradient cannot be driven
// below 1e-9 of the characteristic force scale.
CrystalConfiguration equilibrium_numeric(const TrapPotential &trap,
                                         const std::vector<IonSpecies> &species,
                                         const Eigen::VectorXd &guess);

// Closed-form two-ion equilibrium: decouples the quadratic form with
// simultaneous_diagonalize, enumerates every real root of the scalar
// secular equation in lambda = k q1 q2 / r^3 (bracketed in log(lambda)
// between the poles at v'_i/2), adds the pole-pinned branches for
// zero-force channels, and returns the Hessian-stable candidate with the
// lowest potential energy. Throws NumericalError when no stable
// configuration exists.
CrystalConfiguration
equilibrium_two_ion_analytic(const TrapPotential &trap,
                             const std::vector<IonSpecies> &species);

ModeSpectrum mode_spectrum(const TrapPotential &trap,
                           const CrystalConfiguration &config);

} // namespace iontrap
