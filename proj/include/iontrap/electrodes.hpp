#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "iontrap/harmonics.hpp"

namespace iontrap {

// Rectangular electrode footprint in the trap plane y = 0, coordinates in m.
struct ElectrodePatch {
  double x1 = 0, x2 = 0, z1 = 0, z2 = 0;
};

// One addressable channel; may tie several patches together (the center
// channel is a pair of strips straddling the RF slot).
struct ElectrodeChannel {
  std::string name;
  std::vector<ElectrodePatch> patches;
};

struct PlanarTrapGeometry {
  std::vector<ElectrodeChannel> channels;
  double ion_height = 110e-6; // m above the plane
};

// Center channel plus ten 200 um segments per side along the trap axis,
// 10 um gaps, ion 110 um above the surface. 21 channels total.
PlanarTrapGeometry default_trap_geometry();

// Potential at a point above a grounded plane containing one rectangular
// patch held at 1 V, in the gapless approximation.
double patch_potential(const ElectrodePatch &patch, const Eigen::Vector3d &p);

struct ElectrodeBasisGrid {
  std::vector<std::string> names;
  Eigen::Vector3d center = Eigen::Vector3d::Zero(); // trap site, m
  Eigen::MatrixXd points;  // n x 3, absolute coordinates (m)
  Eigen::MatrixXd samples; // K x n, V at 1 V applied

  int channel_count() const { return static_cast<int>(samples.rows()); }
};

// Samples every channel's unit-voltage potential on a uniform lattice
// centered on the trap site (default 7x7x7 over +-20 um). Throws
// ConfigError on overlapping footprints.
ElectrodeBasisGrid make_synthetic_basis(const PlanarTrapGeometry &geometry,
                                        double half_extent = 20e-6,
                                        int points_per_axis = 7);

struct MultipoleMatrix {
  Eigen::MatrixXd m;               // 8 x K, multipole content per unit volt
  Eigen::MatrixXd pseudo_inverse;  // K x 8, minimal-norm least squares
  Eigen::VectorXd fit_residuals;   // per channel, RMS relative to sample RMS
  Eigen::VectorXd singular_values; // of m
  double basis_condition = 0;      // of the grid regressor
  std::vector<std::string> names;
};

// Least-squares fit of each channel's samples to the eight multipole terms
// plus a constant offset (discarded); the pseudo-inverse truncates singular
// values below svd_cutoff times the largest.
MultipoleMatrix expand_multipoles(const ElectrodeBasisGrid &grid,
                                  double svd_cutoff = 1e-8);

struct VoltageSet {
  Eigen::VectorXd volts;
  std::vector<std::string> names;
  double residual = 0; // relative, achieved multipoles vs requested
};

// Minimal-norm voltage set producing the requested multipoles. Throws
// ConfigError when any electrode exceeds the clamp (in V), naming it.
// The default clamp is the waveform generator's output range.
VoltageSet voltages_for_multipoles(const MultipoleMatrix &mm,
                                   const MultipoleVector &m,
                                   double clamp = 40.0);

} // namespace iontrap
