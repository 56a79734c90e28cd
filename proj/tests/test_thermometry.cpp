#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/rng.hpp"
#include "iontrap/thermometry.hpp"

using namespace iontrap;

namespace {

// Shared-excitation ladder for one Fock number, integrated by classic RK4
// from the joint ground state. Couplings for the red branch start from
// Fock n, for the blue branch from n with one extra quantum per step.
struct LadderState {
  std::complex<double> a0{1, 0}, a1{0, 0}, a2{0, 0};
};

LadderState ladder_rk4(double c1, double c2, double t, int steps) {
  LadderState s;
  const std::complex<double> mi(0, -1);
  const double h = t / steps;
  auto deriv = [&](const LadderState &y) {
    LadderState d;
    d.a0 = mi * c1 * y.a1;
    d.a1 = mi * (c1 * y.a0 + c2 * y.a2);
    d.a2 = mi * c2 * y.a1;
    return d;
  };
  for (int i = 0; i < steps; ++i) {
    const LadderState k1 = deriv(s);
    LadderState y2{s.a0 + 0.5 * h * k1.a0, s.a1 + 0.5 * h * k1.a1,
                   s.a2 + 0.5 * h * k1.a2};
    const LadderState k2 = deriv(y2);
    LadderState y3{s.a0 + 0.5 * h * k2.a0, s.a1 + 0.5 * h * k2.a1,
                   s.a2 + 0.5 * h * k2.a2};
    const LadderState k3 = deriv(y3);
    LadderState y4{s.a0 + h * k3.a0, s.a1 + h * k3.a1, s.a2 + h * k3.a2};
    const LadderState k4 = deriv(y4);
    s.a0 += h / 6.0 * (k1.a0 + 2.0 * k2.a0 + 2.0 * k3.a0 + k4.a0);
    s.a1 += h / 6.0 * (k1.a1 + 2.0 * k2.a1 + 2.0 * k3.a1 + k4.a1);
    s.a2 += h / 6.0 * (k1.a2 + 2.0 * k2.a2 + 2.0 * k3.a2 + k4.a2);
  }
  return s;
}

void ladder_couplings(int n, double rabi, SidebandColor color, double &c1,
                      double &c2) {
  if (color == SidebandColor::red) {
    c1 = rabi * std::sqrt(2.0 * n) / 2.0;
    c2 = n >= 1 ? rabi * std::sqrt(2.0 * (n - 1)) / 2.0 : 0.0;
  } else {
    c1 = rabi * std::sqrt(2.0 * (n + 1)) / 2.0;
    c2 = rabi * std::sqrt(2.0 * (n + 2)) / 2.0;
  }
}

} // namespace

TEST_CASE("closed-form amplitudes match the integrated ladder") {
  const double rabi = 2 * kPi * 12e3;
  double worst = 0;
  for (int n : {0, 1, 2, 3, 5, 8, 13, 21, 50}) {
    for (SidebandColor color : {SidebandColor::red, SidebandColor::blue}) {
      double c1, c2;
      ladder_couplings(n, rabi, color, c1, c2);
      const double w = std::max(std::hypot(c1, c2), rabi);
      for (int chk = 1; chk <= 4; ++chk) {
        const double t = chk * kPi / w;
        const LadderState ode = ladder_rk4(c1, c2, t, 8000 * chk);
        const SidebandAmplitudes cf = sideband_amplitudes(n, rabi, t, color);
        worst = std::max(worst, std::abs(ode.a0 - cf.a00));
        worst = std::max(worst,
                         std::abs(ode.a1 - std::sqrt(2.0) * cf.a01));
        worst = std::max(worst, std::abs(ode.a2 - cf.a11));
        const double e_ode =
            std::norm(ode.a2) + 0.5 * std::norm(ode.a1);
        CHECK(fock_excitation(n, rabi, t, color) ==
              doctest::Approx(e_ode).epsilon(1e-7).scale(1.0));
      }
    }
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("amplitudes stay normalized") {
  const double rabi = 2 * kPi * 50e3;
  for (int n = 0; n <= 50; n += 7) {
    for (int i = 0; i <= 20; ++i) {
      const double t = i * 1e-6;
      for (SidebandColor color : {SidebandColor::red, SidebandColor::blue}) {
        const SidebandAmplitudes a = sideband_amplitudes(n, rabi, t, color);
        const double norm =
            std::norm(a.a00) + 2.0 * std::norm(a.a01) + std::norm(a.a11);
        CHECK(std::abs(norm - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("red sideband on the ground state does nothing") {
  const double rabi = 2 * kPi * 50e3;
  const SidebandAmplitudes a =
      sideband_amplitudes(0, rabi, 17e-6, SidebandColor::red);
  CHECK(std::abs(a.a00 - 1.0) < 1e-12);
  CHECK(std::abs(a.a01) < 1e-12);
  CHECK(std::abs(a.a11) < 1e-12);
  CHECK(fock_excitation(0, rabi, 17e-6, SidebandColor::red) == 0.0);
}

TEST_CASE("pinned thermal excitation values") {
  // A unit Lamb-Dicke factor makes the sideband Rabi rate equal the carrier
  // rate, which is the normalization the pinned numbers were frozen at.
  SidebandModel model;
  model.eta_com = 1.0;
  const double t = 5e-6;
  const double nbar = 3.0;
  const double rabi_com = model.eta_com * model.carrier_rabi;

  CHECK(sideband_excitation(nbar, model, AxialMode::common, t,
                            SidebandColor::red) ==
        doctest::Approx(0.512553872690).epsilon(1e-9));
  CHECK(sideband_excitation(nbar, model, AxialMode::common, t,
                            SidebandColor::blue) ==
        doctest::Approx(0.727170981931).epsilon(1e-9));

  // Independent thermal average over explicitly enumerated Fock states; the
  // two routes truncate the ladder differently, hence the looser bound.
  double direct = 0;
  for (int n = 0; n < 200; ++n)
    direct += thermal_probability(nbar, n) *
              fock_excitation(n, rabi_com, t, SidebandColor::red);
  CHECK(sideband_excitation(nbar, model, AxialMode::common, t,
                            SidebandColor::red) ==
        doctest::Approx(direct).epsilon(2e-5));
}

TEST_CASE("thermal probabilities are normalized with a safe cutoff") {
  for (double nbar : {0.0, 0.017, 1.0, 3.9, 40.0}) {
    const int cutoff = thermal_cutoff(nbar);
    double sum = 0;
    for (int n = 0; n <= cutoff; ++n)
      sum += thermal_probability(nbar, n);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-7));
  }
  CHECK(thermal_probability(0.0, 0) == 1.0);
  CHECK(thermal_probability(0.0, 1) == 0.0);
}

TEST_CASE("carrier excitation reduces to a rabi flop at zero temperature") {
  SidebandModel model;
  for (int i = 1; i <= 6; ++i) {
    const double t = i * 1.3e-6;
    const double direct = std::pow(std::sin(model.carrier_rabi * t / 2), 2);
    CHECK(carrier_excitation(0.0, 0.0, model, t) ==
          doctest::Approx(direct).epsilon(1e-9));
  }
  // Hot crystals dephase: contrast at the first carrier pi time drops.
  const double t_pi = kPi / model.carrier_rabi;
  CHECK(carrier_excitation(20.0, 20.0, model, t_pi) < 0.999);
}

TEST_CASE("mean phonon number is recovered from clean curves") {
  SidebandModel model;
  for (double truth : {0.05, 0.8, 3.9}) {
    std::vector<ExcitationPoint> data;
    for (int i = 1; i <= 60; ++i) {
      ExcitationPoint p;
      p.t = i * 1e-6;
      p.excitation = sideband_excitation(truth, model, AxialMode::stretch,
                                         p.t, SidebandColor::red);
      p.sigma = 0.01;
      data.push_back(p);
    }
    const PhononFit fit =
        fit_mean_phonon(data, model, AxialMode::stretch, SidebandColor::red);
    CHECK(fit.nbar == doctest::Approx(truth).epsilon(1e-3));
    CHECK(fit.lower <= fit.nbar);
    CHECK(fit.upper >= fit.nbar);
    CHECK(fit.chi_squared < 1e-10);
  }
}

TEST_CASE("noisy curves still localize nbar") {
  SidebandModel model;
  Rng rng(77);
  const double truth = 0.5;
  std::vector<ExcitationPoint> data;
  for (int i = 1; i <= 80; ++i) {
    ExcitationPoint p;
    p.t = i * 1.5e-6;
    const double clean = sideband_excitation(truth, model, AxialMode::common,
                                             p.t, SidebandColor::red);
    p.sigma = std::max(0.02 * clean, 1e-3);
    p.excitation = clean + p.sigma * rng.normal();
    data.push_back(p);
  }
  const PhononFit fit =
      fit_mean_phonon(data, model, AxialMode::common, SidebandColor::red);
  CHECK(std::abs(fit.nbar - truth) / truth < 0.1);
  CHECK(fit.sigma > 0);
  CHECK(fit.sigma < 0.1);
}
