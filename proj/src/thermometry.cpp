#include "iontrap/thermometry.hpp"

#include <algorithm>
#include <cmath>

#include "iontrap/errors.hpp"

namespace iontrap {

double thermal_probability(double nbar, int n) {
  if (nbar < 0 || n < 0)
    throw ConfigError("thermal_probability: negative argument");
  if (nbar == 0)
    return n == 0 ? 1.0 : 0.0;
  return std::exp(n * std::log(nbar / (nbar + 1.0))) / (nbar + 1.0);
}

int thermal_cutoff(double nbar) {
  return std::max(50, static_cast<int>(std::ceil(20.0 * nbar)));
}

SidebandAmplitudes sideband_amplitudes(int n, double rabi, double t,
                                       SidebandColor color) {
  if (n < 0)
    throw ConfigError("sideband_amplitudes: negative Fock number");
  const std::complex<double> mi(0.0, -1.0);
  SidebandAmplitudes a;
  if (color == SidebandColor::red) {
    if (n == 0) {
      a.a00 = 1.0;
      a.a01 = 0.0;
      a.a11 = 0.0;
      return a;
    }
    const double dn = n;
    const double w = rabi * std::sqrt((2.0 * dn - 1.0) / 2.0);
    const double c = std::cos(w * t), s = std::sin(w * t);
    a.a00 = (dn - 1.0 + dn * c) / (2.0 * dn - 1.0);
    a.a01 = mi * std::sqrt(dn / (2.0 * (2.0 * dn - 1.0))) * s;
    a.a11 = -std::sqrt(dn * (dn - 1.0)) * (1.0 - c) / (2.0 * dn - 1.0);
    return a;
  }
  const double dn = n;
  const double w = rabi * std::sqrt((2.0 * dn + 3.0) / 2.0);
  const double c = std::cos(w * t), s = std::sin(w * t);
  a.a00 = (dn + 2.0 + (dn + 1.0) * c) / (2.0 * dn + 3.0);
  a.a01 = mi * std::sqrt((dn + 1.0) / (2.0 * (2.0 * dn + 3.0))) * s;
  a.a11 = -std::sqrt((dn + 1.0) * (dn + 2.0)) * (1.0 - c) / (2.0 * dn + 3.0);
  return a;
}

double fock_excitation(int n, double rabi, double t, SidebandColor color) {
  const SidebandAmplitudes a = sideband_amplitudes(n, rabi, t, color);
  return std::norm(a.a11) + std::norm(a.a01);
}

double sideband_excitation(double nbar, const SidebandModel &model,
                           AxialMode mode, double t, SidebandColor color) {
  if (t < 0)
    throw ConfigError("sideband_excitation: negative time");
  const double rabi = model.eta(mode) * model.carrier_rabi;
  const int cutoff = thermal_cutoff(nbar);
  double e = 0;
  for (int n = 0; n <= cutoff; ++n)
    e += thermal_probability(nbar, n) * fock_excitation(n, rabi, t, color);
  return e;
}

double carrier_excitation(double nbar_com, double nbar_str,
                          const SidebandModel &model, double t) {
  if (t < 0)
    throw ConfigError("carrier_excitation: negative time");
  const int nc_max = thermal_cutoff(nbar_com);
  const int ns_max = thermal_cutoff(nbar_str);
  const double ec = model.eta_com * model.eta_com;
  const double es = model.eta_str * model.eta_str;
  double e = 0;
  for (int nc = 0; nc <= nc_max; ++nc) {
    const double pc = thermal_probability(nbar_com, nc);
    for (int ns = 0; ns <= ns_max; ++ns) {
      const double w = model.carrier_rabi * (1.0 - ec * nc - es * ns);
      const double s = std::sin(0.5 * w * t);
      e += pc * thermal_probability(nbar_str, ns) * s * s;
    }
  }
  return e;
}

namespace {

double chi_squared(const std::vector<ExcitationPoint> &data, double nbar,
                   const SidebandModel &model, AxialMode mode,
                   SidebandColor color) {
  double chi = 0;
  for (const auto &p : data) {
    const double r =
        (sideband_excitation(nbar, model, mode, p.t, color) - p.excitation) /
        p.sigma;
    chi += r * r;
  }
  return chi;
}

} // namespace

PhononFit fit_mean_phonon(const std::vector<ExcitationPoint> &data,
                          const SidebandModel &model, AxialMode mode,
                          SidebandColor color) {
  if (data.size() < 5)
    throw ConfigError("fit_mean_phonon: need at least 5 points");
  for (const auto &p : data)
    if (!(p.sigma > 0) || p.t < 0)
      throw ConfigError("fit_mean_phonon: bad data point");

  const auto chi = [&](double nbar) {
    return chi_squared(data, nbar, model, mode, color);
  };

  const int grid_n = 201;
  std::vector<double> grid(grid_n + 1);
  grid[0] = 0.0;
  for (int i = 0; i <= grid_n - 1; ++i)
    grid[i + 1] = std::pow(10.0, -4.0 + 6.0 * i / (grid_n - 1.0));
  int best = 0;
  double best_chi = chi(grid[0]);
  double chi_min = best_chi, chi_max = best_chi;
  for (int i = 1; i < static_cast<int>(grid.size()); ++i) {
    const double c = chi(grid[i]);
    chi_min = std::min(chi_min, c);
    chi_max = std::max(chi_max, c);
    if (c < best_chi) {
      best_chi = c;
      best = i;
    }
  }
  if (chi_max - chi_min <= 1e-9 * (1.0 + chi_max))
    throw NumericalError(
        "fit_mean_phonon: flat signal, the data do not constrain nbar");

  double lo = grid[std::max(0, best - 1)];
  double hi = grid[std::min<int>(grid.size() - 1, best + 1)];
  const double gold = 0.5 * (3.0 - std::sqrt(5.0));
  double x1 = lo + gold * (hi - lo);
  double x2 = hi - gold * (hi - lo);
  double f1 = chi(x1), f2 = chi(x2);
  for (int it = 0; it < 120 && hi - lo > 1e-9 * (1.0 + hi); ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = lo + gold * (hi - lo);
      f1 = chi(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = hi - gold * (hi - lo);
      f2 = chi(x2);
    }
  }

  PhononFit fit;
  fit.nbar = 0.5 * (lo + hi);
  fit.chi_squared = chi(fit.nbar);

  const double h = std::max(1e-4, 0.02 * fit.nbar);
  const double x0 = std::max(0.0, fit.nbar - h);
  const double curv =
      (chi(x0 + 2.0 * h) - 2.0 * chi(x0 + h) + chi(x0)) / (h * h);
  if (!(curv > 0))
    throw NumericalError(
        "fit_mean_phonon: flat signal, the data do not constrain nbar");
  fit.sigma = std::sqrt(2.0 / curv);
  fit.lower = std::max(0.0, fit.nbar - fit.sigma);
  fit.upper = fit.nbar + fit.sigma;
  return fit;
}

} // namespace iontrap
