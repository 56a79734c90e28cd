#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "iontrap/constants.hpp"
#include "iontrap/species.hpp"

namespace iontrap {

// Static potential around the trap site, parametrized by the degree-1 and
// degree-2 spherical-harmonic content:
//   phi(x) = -E . x + (1/2) x^T V x
// Coordinates: z along the trap axis, y normal to the trap surface, x the
// remaining in-plane direction. Crystal rotations happen in the x-z plane.
//
// The degree-1 entries are stored as electric-field components (E = -grad
// phi): f1m1 = E_y, f10 = E_z, f11 = E_x, in V/m. The degree-2 entries are
// the coefficients v_l of the five-matrix quadrupole basis (see
// multipole_to_matrix), in V/m^2.
struct MultipoleVector {
  double f1m1 = 0, f10 = 0, f11 = 0;
  double q2m2 = 0, q2m1 = 0, q20 = 0, q21 = 0, q22 = 0;

  static constexpr int size = 8;

  double &operator[](int i) { return (&f1m1)[i]; }
  double operator[](int i) const { return (&f1m1)[i]; }

  Eigen::Matrix<double, 8, 1> to_vector() const {
    Eigen::Matrix<double, 8, 1> v;
    for (int i = 0; i < 8; ++i)
      v[i] = (*this)[i];
    return v;
  }

  static MultipoleVector from_vector(const Eigen::Matrix<double, 8, 1> &v) {
    MultipoleVector m;
    for (int i = 0; i < 8; ++i)
      m[i] = v[i];
    return m;
  }
};

// Ponderomotive confinement of the RF drive, in the time-averaged
// (pseudopotential) description. gradient_norm_sq is the quadratic
// coefficient S of the squared drive-field amplitude,
//   |grad phi_RF|^2_peak = (S/2) (x^2 + y^2),
// so a species sees the curvature matrix v_rf * diag(1,1,0) with
//   v_rf = q S / (4 m Omega^2).
// The equivalent instantaneous drive is phi_RF = (kappa/2)(x^2 - y^2)
// cos(Omega t) with kappa = sqrt(S/2).
struct RfPseudoPotential {
  double drive_frequency = 2.0 * kPi * 30.0e6; // rad/s
  double gradient_norm_sq = 0;                 // V^2/m^4

  double curvature(const IonSpecies &s) const {
    return s.charge * gradient_norm_sq /
           (4.0 * s.mass * drive_frequency * drive_frequency);
  }

  double drive_curvature() const { // kappa, V/m^2
    return std::sqrt(gradient_norm_sq / 2.0);
  }

  // Mathieu stability parameter along y (and x): q_y = 2 q kappa / (m W^2).
  double stability_q(const IonSpecies &s) const {
    return 2.0 * s.charge * drive_curvature() /
           (s.mass * drive_frequency * drive_frequency);
  }
};

struct TrapPotential {
  MultipoleVector dc;
  RfPseudoPotential rf;

  Eigen::Vector3d field() const { return {dc.f11, dc.f1m1, dc.f10}; }

  // DC + pseudopotential curvature for one species, V/m^2.
  Eigen::Matrix3d curvature(const IonSpecies &s) const;
};

// Cartesian form of the real spherical harmonics of degree 1 and 2 with
// their normalization prefactors, evaluated at a point in meters.
double evaluate_harmonic(int l, int n, const Eigen::Vector3d &point);

// Expands the multipole vector into the field vector E (V/m) and the
// quadrupole matrix V (V/m^2), phi = -E.x + x^T V x / 2. V is built from
// the five traceless symmetric basis matrices
//   B_q2m2 = [[0,1/2,0],[1/2,0,0],[0,0,0]]
//   B_q2m1 = [[0,0,0],[0,0,1/2],[0,1/2,0]]
//   B_q20  = diag(-1,-1,2)
//   B_q21  = [[0,0,1/2],[0,0,0],[1/2,0,0]]
//   B_q22  = diag(1,-1,0)
std::pair<Eigen::Vector3d, Eigen::Matrix3d>
multipole_to_matrix(const MultipoleVector &m);

// Inverse of multipole_to_matrix; v must be symmetric and traceless.
MultipoleVector matrix_to_multipole(const Eigen::Vector3d &field,
                                    const Eigen::Matrix3d &v);

// Total potential energy (J) of a crystal at stacked positions x (3N),
// including per-species pseudopotential curvature and pairwise Coulomb
// repulsion. Throws NumericalError on coincident ions.
double potential_energy(const Eigen::VectorXd &x,
                        const std::vector<IonSpecies> &species,
                        const TrapPotential &trap);

// Analytic gradient (N) and Hessian (J/m^2) of potential_energy.
Eigen::VectorXd potential_gradient(const Eigen::VectorXd &x,
                                   const std::vector<IonSpecies> &species,
                                   const TrapPotential &trap);

Eigen::MatrixXd potential_hessian(const Eigen::VectorXd &x,
                                  const std::vector<IonSpecies> &species,
                                  const TrapPotential &trap);

// Single-species working point: the (v_rf, q20, q22) triple whose
// single-ion secular frequencies along (x, y, z) match the given targets
// (rad/s). Other multipole entries are zero.
TrapPotential trap_from_secular_frequencies(const IonSpecies &s,
                                            const Eigen::Vector3d &omega,
                                            double drive_frequency);

} // namespace iontrap
