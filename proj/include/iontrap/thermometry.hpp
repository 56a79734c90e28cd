#pragma once

#include <complex>
#include <vector>

#include "iontrap/constants.hpp"

namespace iontrap {

enum class SidebandColor { red, blue };
enum class AxialMode { common, stretch };

// Shared-probe coupling of the two-ion crystal: carrier Rabi frequency and
// the Lamb-Dicke factors of the two axial modes.
struct SidebandModel {
  double carrier_rabi = 2.0 * kPi * 50e3; // rad/s
  double eta_com = 0.061;
  double eta_str = 0.047;

  double eta(AxialMode mode) const {
    return mode == AxialMode::common ? eta_com : eta_str;
  }
};

// Thermal occupation probability P(n) and the truncation index used for
// thermal sums (max(50, 20 nbar), keeping the neglected tail below 1e-8).
double thermal_probability(double nbar, int n);
int thermal_cutoff(double nbar);

// Two-ion sideband amplitudes at Fock number n after time t, for the
// symmetric shared-excitation ladder driven at base Rabi frequency `rabi`.
// a01 is the per-branch amplitude of either singly excited ion, so
// |a00|^2 + 2 |a01|^2 + |a11|^2 = 1.
struct SidebandAmplitudes {
  std::complex<double> a00, a01, a11;
};

SidebandAmplitudes sideband_amplitudes(int n, double rabi, double t,
                                       SidebandColor color);

// Mean excited fraction of the ion pair at Fock number n:
// |a11|^2 + |a01|^2.
double fock_excitation(int n, double rabi, double t, SidebandColor color);

// Thermal average of fock_excitation over P_nbar(n); the sideband is driven
// at eta(mode) * carrier_rabi.
double sideband_excitation(double nbar, const SidebandModel &model,
                           AxialMode mode, double t, SidebandColor color);

// Carrier excitation under second-order Lamb-Dicke corrections from both
// axial modes: a double thermal sum of sin^2(Omega(n_com, n_str) t / 2)
// with Omega = carrier_rabi (1 - eta_com^2 n_com - eta_str^2 n_str).
double carrier_excitation(double nbar_com, double nbar_str,
                          const SidebandModel &model, double t);

struct ExcitationPoint {
  double t = 0;          // s
  double excitation = 0; // [0, 1]
  double sigma = 0;      // 1-sigma uncertainty
};

struct PhononFit {
  double nbar = 0;
  double sigma = 0; // from the chi-squared curvature
  double lower = 0, upper = 0;
  double chi_squared = 0;
};

// Weighted least-squares fit of sideband_excitation over nbar: coarse
// log-spaced grid on [1e-4, 100] (plus nbar = 0) followed by golden-section
// refinement. Throws NumericalError when the data do not constrain nbar.
PhononFit fit_mean_phonon(const std::vector<ExcitationPoint> &data,
                          const SidebandModel &model, AxialMode mode,
                          SidebandColor color);

} // namespace iontrap
