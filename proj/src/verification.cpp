#include "iontrap/verification.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "iontrap/calibrate.hpp"
#include "iontrap/constants.hpp"
#include "iontrap/crystal.hpp"
#include "iontrap/dynamics.hpp"
#include "iontrap/electrodes.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/filters.hpp"
#include "iontrap/harmonics.hpp"
#include "iontrap/optimizer.hpp"
#include "iontrap/rng.hpp"
#include "iontrap/rotation.hpp"
#include "iontrap/serialize.hpp"
#include "iontrap/species.hpp"
#include "iontrap/thermometry.hpp"

namespace iontrap {
namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t0)
        .count();
  }
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void push(std::vector<CheckResult> &out, int criterion, const char *name,
          double value, double threshold, bool pass,
          const std::string &detail) {
  out.push_back({criterion, name, value, threshold, pass, detail});
}

// Everything expensive the checks share, built on first use.
struct Context {
  TrapPotential trap; // Ca working point
  std::vector<IonSpecies> caca, casr;
  LinearStateModel filter;

  Context() {
    const Eigen::Vector3d target(2 * kPi * 2.796e6, 2 * kPi * 3.499e6,
                                 2 * kPi * 1.257e6);
    trap = trap_from_secular_frequencies(ca40(), target, 2 * kPi * 30e6);
    caca = {ca40(), ca40()};
    casr = {ca40(), sr88()};
    filter = assemble(FilterNetwork{});
  }

  const MultipoleMatrix &mm() {
    if (!mm_) {
      grid_ = make_synthetic_basis(default_trap_geometry());
      mm_ = expand_multipoles(*grid_);
    }
    return *mm_;
  }
  const ElectrodeBasisGrid &grid() {
    mm();
    return *grid_;
  }
  // Criterion 3's object: 100 steps at the stock 500 ns.
  const MultipoleSequence &rot100() {
    if (!rot100_) {
      Timer t;
      rot100_ = design_rotation(trap, caca, CostWeights{},
                                RotationSchedule::uniform(100));
      rot100_seconds = t.seconds();
    }
    return *rot100_;
  }
  // The 25 us waveform used by the filter-chain checks: same angle grid,
  // faster clock.
  const MultipoleSequence &rot25us() {
    if (!rot25us_)
      rot25us_ = design_rotation(trap, caca, CostWeights{},
                                 RotationSchedule::uniform(100, 250e-9));
    return *rot25us_;
  }
  const WaveformParams &desired25() {
    if (!desired25_)
      desired25_ = fourier_fit(rot25us(), 3);
    return *desired25_;
  }
  const MultipoleSequence &mixed() {
    if (!mixed_) {
      Timer t;
      mixed_ = design_rotation(trap, casr, CostWeights{1.0, 0.1, 0.1, 1.0},
                               RotationSchedule::uniform(100));
      mixed_seconds = t.seconds();
    }
    return *mixed_;
  }

  double rot100_seconds = 0;
  double mixed_seconds = 0;

private:
  std::optional<ElectrodeBasisGrid> grid_;
  std::optional<MultipoleMatrix> mm_;
  std::optional<MultipoleSequence> rot100_, rot25us_, mixed_;
  std::optional<WaveformParams> desired25_;
};

// Random stable-ish potential around the working point; the ranges keep
// most draws trappable for both species pairs.
TrapPotential random_trap(const TrapPotential &base, Rng &rng) {
  TrapPotential t = base;
  t.dc.q2m2 = rng.uniform(-3e6, 3e6);
  t.dc.q2m1 = rng.uniform(-3e6, 3e6);
  t.dc.q20 = base.dc.q20 * rng.uniform(0.6, 1.6);
  t.dc.q21 = rng.uniform(-3e6, 3e6);
  t.dc.q22 = base.dc.q22 * rng.uniform(0.5, 1.5);
  t.dc.f1m1 = rng.uniform(-20, 20);
  t.dc.f10 = rng.uniform(-20, 20);
  t.dc.f11 = rng.uniform(-20, 20);
  return t;
}

int find_mode(const ModeSpectrum &sp, const std::string &label) {
  for (int i = 0; i < static_cast<int>(sp.labels.size()); ++i)
    if (sp.labels[i] == label)
      return i;
  throw NumericalError("mode label " + label + " not found");
}

Eigen::VectorXd mode_energies_at(const CrystalConfiguration &eq,
                                 const ModeSpectrum &sp,
                                 const Eigen::VectorXd &x,
                                 const Eigen::VectorXd &v) {
  Eigen::VectorXd dx = x - eq.positions;
  Eigen::VectorXd dv = v;
  for (int i = 0; i < eq.ion_count(); ++i) {
    const double w = std::sqrt(eq.species[i].mass);
    dx.segment<3>(3 * i) *= w;
    dv.segment<3>(3 * i) *= w;
  }
  Eigen::VectorXd e(sp.frequencies.size());
  for (int k = 0; k < sp.frequencies.size(); ++k) {
    const double q = sp.mode_vectors.col(k).dot(dx);
    const double p = sp.mode_vectors.col(k).dot(dv);
    const double w = sp.frequencies[k];
    e[k] = 0.5 * (p * p + w * w * q * q);
  }
  return e;
}

// ---------------------------------------------------------------- 1

void check_two_ion_solver(Context &ctx, std::vector<CheckResult> &out) {
  Timer timer;
  Rng rng(0);
  double worst = 0;
  int failures = 0;
  for (const auto &pair : {ctx.caca, ctx.casr}) {
    for (int trial = 0; trial < 100; ++trial) {
      const TrapPotential t = random_trap(ctx.trap, rng);
      Eigen::VectorXd offset(6);
      for (int i = 0; i < 6; ++i)
        offset[i] = rng.uniform(-0.3e-6, 0.3e-6);
      try {
        const CrystalConfiguration a = equilibrium_two_ion_analytic(t, pair);
        const CrystalConfiguration n =
            equilibrium_numeric(t, pair, a.positions + offset);
        worst = std::max(worst, (a.positions - n.positions).norm());
      } catch (const NumericalError &) {
        ++failures;
      }
    }
  }
  const double dt = timer.seconds();
  push(out, 1, "two-ion-solver-agreement", worst, 1e-12,
       worst < 1e-12 && failures == 0,
       "worst |dx| " + num(worst) + " m over 200 potentials; " +
           num(failures) + " unsolved");
  push(out, 1, "two-ion-solver-runtime", dt, 5.0, dt < 5.0,
       num(dt) + " s for both species pairs");
}

// ---------------------------------------------------------------- 2

void check_mode_analysis(Context &ctx, std::vector<CheckResult> &out) {
  const CrystalConfiguration eq =
      equilibrium_two_ion_analytic(ctx.trap, ctx.caca);
  const ModeSpectrum sp = mode_spectrum(ctx.trap, eq);
  const double wc = sp.frequencies[find_mode(sp, "z-com")];
  const double ws = sp.frequencies[find_mode(sp, "z-str")];
  const double ratio_dev = std::abs(ws / wc / std::sqrt(3.0) - 1.0);
  push(out, 2, "axial-mode-ratio", ratio_dev, 1e-9, ratio_dev < 1e-9,
       "stretch/com = " + num(ws / wc) + ", sqrt(3) to " + num(ratio_dev));

  Rng rng(1);
  double worst_h = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto &pair = trial % 2 ? ctx.casr : ctx.caca;
    const TrapPotential t = random_trap(ctx.trap, rng);
    Eigen::VectorXd x(6);
    for (int i = 0; i < 6; ++i)
      x[i] = rng.uniform(-1e-6, 1e-6);
    x[2] -= 3e-6;
    x[5] += 3e-6;
    const Eigen::MatrixXd h = potential_hessian(x, pair, t);
    Eigen::MatrixXd hfd(6, 6);
    const double step = 1e-9;
    for (int j = 0; j < 6; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += step;
      xm[j] -= step;
      hfd.col(j) = (potential_gradient(xp, pair, t) -
                    potential_gradient(xm, pair, t)) /
                   (2 * step);
    }
    hfd = 0.5 * (hfd + hfd.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(h), ef(hfd);
    const double scale = ea.eigenvalues().cwiseAbs().maxCoeff();
    worst_h = std::max(
        worst_h,
        (ea.eigenvalues() - ef.eigenvalues()).cwiseAbs().maxCoeff() / scale);
  }
  push(out, 2, "hessian-fd-spectra", worst_h, 1e-6, worst_h < 1e-6,
       "worst relative eigenvalue deviation " + num(worst_h) +
           " over 20 configurations");

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(
      ctx.trap.curvature(ca40()));
  Eigen::Vector3d meas;
  for (int i = 0; i < 3; ++i)
    meas[i] = std::sqrt(ca40().charge * es.eigenvalues()[i] / ca40().mass);
  Eigen::Vector3d target(2 * kPi * 1.257e6, 2 * kPi * 2.796e6,
                         2 * kPi * 3.499e6);
  const double residual =
      ((meas - target).cwiseQuotient(target)).cwiseAbs().maxCoeff();
  push(out, 2, "working-point-inversion", residual, 1e-3, residual < 1e-3,
       "single-ion frequencies {" + num(meas[1] / (2 * kPi * 1e6)) + ", " +
           num(meas[2] / (2 * kPi * 1e6)) + ", " +
           num(meas[0] / (2 * kPi * 1e6)) + "} MHz, worst residual " +
           num(residual));
}

// ---------------------------------------------------------------- 3

void check_rotation_design(Context &ctx, std::vector<CheckResult> &out) {
  const MultipoleSequence &seq = ctx.rot100();
  const int steps = static_cast<int>(seq.steps.size());

  TrapPotential t0 = ctx.trap;
  t0.dc = seq.steps.front();
  const ModeSpectrum sp0 =
      mode_spectrum(t0, equilibrium_two_ion_analytic(t0, ctx.caca));
  double worst = 0;
  for (int i = 1; i < steps; ++i) {
    TrapPotential t = ctx.trap;
    t.dc = seq.steps[i];
    const ModeSpectrum sp =
        mode_spectrum(t, equilibrium_two_ion_analytic(t, ctx.caca));
    worst = std::max(worst, ((sp.frequencies - sp0.frequencies)
                                 .cwiseQuotient(sp0.frequencies))
                                .cwiseAbs()
                                .maxCoeff());
  }
  push(out, 3, "rotation-frequency-hold", worst, 0.01, worst < 0.01,
       num(steps - 1) + " steps, worst mode-frequency drift " + num(worst));

  const double endpoint =
      (seq.steps.back().to_vector() - seq.steps.front().to_vector()).norm() /
      seq.steps.front().to_vector().norm();
  push(out, 3, "rotation-endpoint-return", endpoint, 1e-6, endpoint < 1e-6,
       "relative endpoint deviation " + num(endpoint));

  push(out, 3, "rotation-design-runtime", ctx.rot100_seconds, 60.0,
       ctx.rot100_seconds < 60.0, num(ctx.rot100_seconds) + " s to design");
}

// ---------------------------------------------------------------- 4

void check_electrode_solutions(Context &ctx, std::vector<CheckResult> &out) {
  const MultipoleMatrix &mm = ctx.mm();
  MultipoleVector m;
  m.f1m1 = 5;
  m.f10 = -7;
  m.f11 = 3;
  m.q2m2 = 1e6;
  m.q2m1 = -2e6;
  m.q20 = ctx.trap.dc.q20;
  m.q21 = 1.5e6;
  m.q22 = ctx.trap.dc.q22;

  const VoltageSet vs = voltages_for_multipoles(mm, m);
  const double roundtrip =
      (mm.m * vs.volts - m.to_vector()).norm() / m.to_vector().norm();
  push(out, 4, "multipole-roundtrip", roundtrip, 1e-6, roundtrip < 1e-6,
       "|M a - m|/|m| = " + num(roundtrip) + ", peak voltage " +
           num(vs.volts.cwiseAbs().maxCoeff()) + " V");

  // Re-expand the summed potential on the raw grid with an independent
  // polynomial regression and compare coefficient by coefficient.
  const ElectrodeBasisGrid &grid = ctx.grid();
  const Eigen::VectorXd phi = grid.samples.transpose() * vs.volts;
  const int n = static_cast<int>(grid.points.rows());
  Eigen::MatrixXd basis(n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d d =
        grid.points.row(i).transpose() - ctx.grid().center;
    basis(i, 0) = -d.y();
    basis(i, 1) = -d.z();
    basis(i, 2) = -d.x();
    basis(i, 3) = d.x() * d.y() / 2;
    basis(i, 4) = d.y() * d.z() / 2;
    basis(i, 5) = (2 * d.z() * d.z() - d.x() * d.x() - d.y() * d.y()) / 2;
    basis(i, 6) = d.x() * d.z() / 2;
    basis(i, 7) = (d.x() * d.x() - d.y() * d.y()) / 2;
    basis(i, 8) = 1.0;
  }
  const Eigen::VectorXd coef = basis.colPivHouseholderQr().solve(phi);
  double worst = 0;
  for (int i = 0; i < 8; ++i)
    worst = std::max(worst, std::abs(coef[i] - m[i]) / std::abs(m[i]));
  push(out, 4, "multipole-reexpansion", worst, 0.01, worst < 0.01,
       "worst per-coefficient deviation " + num(worst));
}

// ---------------------------------------------------------------- 5

void check_filter_model(Context &ctx, std::vector<CheckResult> &out) {
  Timer timer;
  auto gain_db = [&](double f) {
    return 20 * std::log10(std::abs(frequency_response(ctx.filter, f)(0, 0)));
  };

  const double a1m = -gain_db(1e6);
  push(out, 5, "filter-1mhz", a1m, 3.0, std::abs(a1m - 42) <= 3,
       num(a1m) + " dB attenuation at 1 MHz (want 42 +- 3)");
  const double a3m = -gain_db(3e6);
  push(out, 5, "filter-3mhz", a3m, 3.0, std::abs(a3m - 80) <= 3,
       num(a3m) + " dB attenuation at 3 MHz (want 80 +- 3)");

  // The band of frequencies attenuated by 1.5 to 2 dB must lie inside the
  // waveform band at 20..40 kHz. Attenuation grows monotonically there, so
  // bisect for the two level crossings.
  auto level_crossing = [&](double db) {
    double lo = 5e3, hi = 200e3;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (-gain_db(mid) < db ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  const double f_lo = level_crossing(1.5);
  const double f_hi = level_crossing(2.0);
  const bool droop_ok = f_lo >= 20e3 && f_hi <= 40e3 && f_lo < f_hi;
  push(out, 5, "filter-passband-droop", f_lo, 40e3, droop_ok,
       "1.5..2 dB attenuation band spans " + num(f_lo / 1e3) + ".." +
           num(f_hi / 1e3) + " kHz (want within 20..40)");

  const std::complex<double> h4 = frequency_response(ctx.filter, 4e3)(0, 0);
  const std::complex<double> h6 = frequency_response(ctx.filter, 6e3)(0, 0);
  const double delay =
      -(std::arg(h6) - std::arg(h4)) / (2 * kPi * 2e3);
  push(out, 5, "filter-group-delay", delay, 6.5e-6,
       delay >= 3.5e-6 && delay <= 6.5e-6,
       num(delay * 1e6) + " us group delay near 5 kHz (want 5 +- 1.5)");

  // One driven channel, sin^2 pulse over 25 us, watch the neighbours.
  const double dt = 5e-8;
  const int cols = 1201; // 60 us
  VoltageSequence pulse;
  pulse.sample_period = dt;
  pulse.samples = Eigen::MatrixXd::Zero(21, cols);
  for (int i = 0; i < cols; ++i) {
    const double t = i * dt;
    if (t <= 25e-6) {
      const double s = std::sin(kPi * t / 25e-6);
      pulse.samples(0, i) = s * s;
    }
  }
  const VoltageSequence resp = apply_filter(ctx.filter, pulse, true);
  const double driven = resp.samples.row(0).cwiseAbs().maxCoeff();
  int worst_row = 1;
  double cross = 0;
  for (int r = 1; r < 21; ++r) {
    const double peak = resp.samples.row(r).cwiseAbs().maxCoeff();
    if (peak > cross) {
      cross = peak;
      worst_row = r;
    }
  }
  push(out, 5, "filter-crosstalk-peak", cross / driven, 0.05,
       cross / driven <= 0.05,
       "worst neighbour peak " + num(100 * cross / driven) + "% of driven");

  int last = 0;
  for (int i = 0; i < cols; ++i)
    if (std::abs(resp.samples(worst_row, i)) >= 0.25 * cross)
      last = i;
  const double settle = last * dt - 25e-6;
  push(out, 5, "filter-crosstalk-settling", settle, 25e-6,
       settle <= 25e-6,
       "decayed to a quarter of its peak " + num(settle * 1e6) +
           " us after the pulse");

  const double dtw = timer.seconds();
  push(out, 5, "filter-runtime", dtw, 1.0, dtw < 1.0, num(dtw) + " s");
}

// ---------------------------------------------------------------- 6

// Voltage samples realizing the sequence exactly if the chain were ideal.
Eigen::MatrixXd naive_voltages(const MultipoleSequence &seq,
                               const MultipoleMatrix &mm) {
  Eigen::MatrixXd u(mm.pseudo_inverse.rows(),
                    static_cast<int>(seq.steps.size()));
  for (int i = 0; i < u.cols(); ++i)
    u.col(i) = mm.pseudo_inverse * seq.steps[i].to_vector();
  return u;
}

void check_precompensation(Context &ctx, std::vector<CheckResult> &out) {
  const WaveformParams &desired = ctx.desired25();
  const MultipoleMatrix &mm = ctx.mm();
  const CalibrationMap ident;

  const WaveformParams set =
      precompensate(desired, ctx.filter, ident, mm, 12, 40);
  // Channels the design actually sweeps; the field rows are flat zero and
  // get their own absolute check below.
  double worst = 0;
  for (int c = 3; c < 8; ++c)
    worst = std::max(worst, set.fit_residuals[c]);
  push(out, 6, "precompensation-residual", worst, 0.02, worst < 0.02,
       "worst quadrupole-channel RMS misfit " + num(100 * worst) +
           "% of range over a 25 us waveform");

  const double sp = desired.sample_period;
  const DrivenPotential raw =
      realized_drive(naive_voltages(params_to_sequence(desired), mm), sp,
                     ctx.filter, mm, ident, ctx.trap.rf, 20, 40);
  const double induced = raw.samples.row(0).cwiseAbs().maxCoeff();
  push(out, 6, "uncompensated-out-of-plane", induced, 6000.0,
       induced >= 600.0 && induced <= 60000.0,
       "peak induced E_y " + num(induced / 1000) +
           " V/mm without compensation (want order 6 V/mm)");

  const DrivenPotential comp =
      realized_drive(naive_voltages(params_to_sequence(set), mm), sp,
                     ctx.filter, mm, ident, ctx.trap.rf, 20, 40);
  const double residual_field = comp.samples.row(0).cwiseAbs().maxCoeff();
  push(out, 6, "compensated-out-of-plane", residual_field, 0.05 * induced,
       residual_field < 0.05 * induced,
       "peak E_y " + num(residual_field) + " V/m after compensation, " +
           num(100 * residual_field / induced) + "% of the raw artefact");
}

// ---------------------------------------------------------------- 7

DrivenPotential static_drive(const TrapPotential &trap, double duration) {
  DrivenPotential dp;
  dp.rf = trap.rf;
  dp.sample_period = duration;
  dp.samples.resize(8, 2);
  dp.samples.col(0) = trap.dc.to_vector();
  dp.samples.col(1) = trap.dc.to_vector();
  return dp;
}

void check_static_dynamics(Context &ctx, std::vector<CheckResult> &out) {
  const CrystalConfiguration eq =
      equilibrium_two_ion_analytic(ctx.trap, ctx.caca);
  const ModeSpectrum sp = mode_spectrum(ctx.trap, eq);

  {
    SimulationConfig cfg;
    cfg.time_step = 1.5e-10;
    cfg.settle_time = 0;
    cfg.record_interval = 1e-6;
    Eigen::VectorXd x0 = eq.positions;
    x0[2] += 1e-7;
    x0[5] += 1e-7;
    cfg.initial_position = x0;
    const Trajectory traj =
        simulate(static_drive(ctx.trap, 1e-3), ctx.caca, cfg);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(6);
    const double e_eq = crystal_energy(ctx.trap, ctx.caca, eq.positions, zero);
    const double e0 = crystal_energy(ctx.trap, ctx.caca, x0, zero);
    const double excitation = e0 - e_eq;
    double drift = 0;
    for (int i = 0; i < traj.times.size(); ++i)
      drift = std::max(
          drift, std::abs(crystal_energy(ctx.trap, ctx.caca,
                                         traj.positions.col(i),
                                         traj.velocities.col(i)) -
                          e0));
    const double rel = drift / excitation;
    push(out, 7, "static-energy-drift", rel, 1e-6, rel < 1e-6,
         "1 ms hold, peak |dE|/E_exc = " + num(rel));
  }

  {
    DrivenPotential dp;
    dp.rf = ctx.trap.rf;
    dp.sample_period = 1e-6;
    dp.samples.resize(8, 201);
    for (int i = 0; i <= 200; ++i) {
      MultipoleVector m = ctx.trap.dc;
      const double s = std::sin(kPi * i / 200.0);
      m.f10 = 500.0 * s * s;
      dp.samples.col(i) = m.to_vector();
    }
    dp.samples.col(200) = ctx.trap.dc.to_vector();
    SimulationConfig cfg;
    const Trajectory traj = simulate(dp, ctx.caca, cfg);
    const double dn = axial_heating(mode_energy(traj));
    push(out, 7, "adiabatic-excursion", dn, 0.1, std::abs(dn) < 0.1,
         "0.5 V/mm axial excursion over 200 us, axial dn = " + num(dn));
  }

  {
    const double kt = constants::boltzmann * 0.5e-3;
    double sum = 0;
    int count = 0;
    for (int s = 0; s < 100; ++s) {
      SimulationConfig cfg;
      cfg.thermal_init = true;
      cfg.temperature = 0.5e-3;
      cfg.seed = Rng::derive_seed(2024, s);
      const Trajectory traj =
          simulate(static_drive(ctx.trap, 20e-6), ctx.caca, cfg);
      const Eigen::VectorXd e =
          mode_energies_at(eq, sp, traj.final_position, traj.final_velocity);
      sum += e.sum() / kt;
      count += static_cast<int>(e.size());
    }
    const double mean = sum / count;
    push(out, 7, "thermal-equipartition", mean, 0.1,
         mean > 0.9 && mean < 1.1,
         "mean mode energy / kT = " + num(mean) +
             " over 100 seeds x 6 modes at 0.5 mK");
  }
}

// ---------------------------------------------------------------- 8

void check_mixed_species(Context &ctx, std::vector<CheckResult> &out) {
  const MultipoleSequence &seq = ctx.mixed();

  SimulationConfig cfg;
  const Trajectory traj = simulate(seq, ctx.casr, ctx.trap.rf, cfg);
  const HeatingResult hr = mode_energy(traj);
  double r_ca = 0, r_sr = 0;
  for (int i = 0; i < traj.times.size(); ++i) {
    r_ca = std::max(r_ca, std::hypot(traj.positions(0, i),
                                     traj.positions(1, i)));
    r_sr = std::max(r_sr, std::hypot(traj.positions(3, i),
                                     traj.positions(4, i)));
  }
  const double ratio = r_sr / r_ca;
  push(out, 8, "mixed-radial-asymmetry", ratio, 1.3,
       hr.success && ratio > 1.3,
       std::string("rotation ") + (hr.success ? "succeeded" : "failed") +
           "; peak radial excursion Sr/Ca = " + num(ratio));

  {
    // Paper-nominal potential: the x curvature is purely ponderomotive, so
    // the displacement ratio under E_x is the mass ratio.
    TrapPotential nom;
    nom.dc.q20 = 1e7;
    nom.dc.q22 = 1e7;
    nom.rf.drive_frequency = 2 * kPi * 30e6;
    nom.rf.gradient_norm_sq = 1.6e8 * 4 * ca40().mass *
                              nom.rf.drive_frequency *
                              nom.rf.drive_frequency / ca40().charge;
    const Eigen::Vector3d e(10, 0, 0);
    const Eigen::Vector3d x_ca = nom.curvature(ca40()).ldlt().solve(e);
    const Eigen::Vector3d x_sr = nom.curvature(sr88()).ldlt().solve(e);
    const double dratio = x_sr.x() / x_ca.x();
    push(out, 8, "static-displacement-ratio", dratio, 2.2,
         dratio > 1.9 && dratio < 2.5,
         "Sr/Ca displacement under E_x at the nominal potential = " +
             num(dratio));
  }

  std::vector<double> grid;
  for (int i = -20; i <= 20; ++i)
    grid.push_back(5.0 * i);
  const OffsetSweepResult sw =
      offset_field_sweep(seq, ctx.casr, ctx.trap.rf, grid, cfg);
  bool has_a = false, has_b = false;
  int bidi_lo = -1, bidi_hi = -1, bidi_count = 0;
  const std::string always0 = "always " + sw.initial_orders[0];
  const std::string always1 = "always " + sw.initial_orders[1];
  for (int i = 0; i < static_cast<int>(grid.size()); ++i) {
    const std::string r = sw.regime(i);
    if (r == always0)
      has_a = true;
    if (r == always1)
      has_b = true;
    if (r == "bidirectional") {
      if (bidi_lo < 0)
        bidi_lo = i;
      bidi_hi = i;
      ++bidi_count;
    }
  }
  const bool contiguous =
      bidi_count > 0 && bidi_count == bidi_hi - bidi_lo + 1;
  push(out, 8, "offset-sweep-regimes", bidi_count, 1.0,
       has_a && has_b && contiguous,
       "always-" + sw.initial_orders[0] + ": " + (has_a ? "yes" : "no") +
           ", always-" + sw.initial_orders[1] + ": " + (has_b ? "yes" : "no") +
           ", contiguous bidirectional points: " + num(bidi_count));

  const double half_width =
      bidi_count > 0 ? (grid[bidi_hi] - grid[bidi_lo]) / 2 + 2.5 : 0.0;
  push(out, 8, "offset-window-half-width", half_width, 75.0,
       half_width >= 25.0 / 3 && half_width <= 75.0,
       "bidirectional window half-width " + num(half_width) +
           " V/m (25 V/m within 3x)");
}

// ---------------------------------------------------------------- 9

double heating_objective(const OracleOutcome &o) {
  return o.loss ? std::numeric_limits<double>::infinity() : o.delta_n.sum();
}

void check_optimizer(Context &ctx, std::vector<CheckResult> &out,
                     int threads) {
  Timer timer;
  const MultipoleMatrix &mm = ctx.mm();
  const CalibrationMap ident;
  const WaveformParams &desired = ctx.desired25();

  // Coarse compensation as the starting point: three sine terms leave a
  // real distortion for the optimizer to clean up.
  const WaveformParams start =
      precompensate(desired, ctx.filter, ident, mm, 3, 40);
  const Eigen::MatrixXd out_map = ident.a * mm.m;
  const DenseOutputModel dom =
      dense_output(ctx.filter, out_map, desired.sample_period, 4);

  auto oracle = [&](const Eigen::VectorXd &x) -> OracleOutcome {
    OracleOutcome o;
    try {
      const WaveformParams wp = unpack_candidate(x, start);
      const Eigen::MatrixXd u = naive_voltages(params_to_sequence(wp), mm);
      const DrivenPotential drive =
          realized_drive(u, dom, ident.b, ctx.trap.rf, 40);
      SimulationConfig cfg;
      cfg.settle_time = 5e-6;
      const Trajectory traj = simulate(drive, ctx.caca, cfg);
      const HeatingResult hr = mode_energy(traj);
      o.delta_n = hr.delta_n;
      o.labels = hr.mode_labels;
      o.success = hr.success;
    } catch (const IonLossError &) {
      o.loss = true;
    } catch (const NumericalError &) {
      o.loss = true;
    }
    return o;
  };

  const Eigen::VectorXd a_init = pack_candidate(start);
  const int dim = static_cast<int>(a_init.size());
  Eigen::VectorXd bounds(dim);
  for (int c = 0; c < 8; ++c) {
    double scale = 0;
    for (int p = 1; p <= start.p_max(); ++p)
      scale = std::max(scale, std::abs(start.a(p, c)));
    for (int p = 0; p < start.p_max(); ++p) {
      const int j = 8 * p + c;
      bounds[j] = 0.05 * std::abs(a_init[j]) + 0.005 * scale;
    }
  }
  bounds[dim - 1] = 5.0;

  LoopConfig cfg;
  cfg.threads = threads;
  const LoopResult run = optimize_loop(oracle, a_init, bounds, cfg, 7);

  double start_objective = std::numeric_limits<double>::quiet_NaN();
  for (const auto &rec : run.history)
    if (rec.iteration == 0 && rec.index == 0)
      start_objective = rec.loss ? std::numeric_limits<double>::infinity()
                                 : rec.objective;
  push(out, 9, "optimizer-improves-start", run.best_objective,
       start_objective, run.best_objective < start_objective,
       "best heating " + num(run.best_objective) + " quanta vs " +
           num(start_objective) + " at the precompensated start");

  // Pure random search in the same box, 5000 draws.
  CandidateBatch rb = sample_candidates(a_init, bounds, 5000, 101);
  std::vector<double> rnd(5000);
  {
    std::atomic<int> next{0};
    auto worker = [&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= 5000)
          return;
        rnd[i] = heating_objective(oracle(rb.candidates.col(i)));
      }
    };
    int nt = threads > 0 ? threads
                         : static_cast<int>(std::thread::hardware_concurrency());
    nt = std::max(1, nt);
    std::vector<std::thread> pool;
    for (int i = 0; i < nt; ++i)
      pool.emplace_back(worker);
    for (auto &th : pool)
      th.join();
  }
  const double best_random = *std::min_element(rnd.begin(), rnd.end());
  push(out, 9, "optimizer-vs-random", run.best_objective, 2 * best_random,
       run.best_objective <= 2 * best_random,
       "loop best " + num(run.best_objective) + " vs random-search best " +
           num(best_random) + " over 5000 draws");

  const LoopResult rerun = optimize_loop(oracle, a_init, bounds, cfg, 7);
  const bool identical =
      history_csv(run.history) == history_csv(rerun.history) &&
      run.best.size() == rerun.best.size() &&
      (run.best.array() == rerun.best.array()).all();
  push(out, 9, "optimizer-deterministic", identical ? 1.0 : 0.0, 1.0,
       identical, identical ? "rerun reproduced the history byte for byte"
                            : "rerun diverged");

  const double dt = timer.seconds();
  push(out, 9, "optimizer-runtime", dt, 1800.0, dt < 1800.0,
       num(dt) + " s for 2 loops plus the random baseline");
}

// ---------------------------------------------------------------- 10

struct AmpState {
  std::complex<double> a0, a1, a2; // a1 in the orthonormal basis
};

AmpState ladder_rk4(double c1, double c2, double t, int steps) {
  const std::complex<double> mi(0, -1);
  auto deriv = [&](const AmpState &s) {
    AmpState d;
    d.a0 = mi * c1 * s.a1;
    d.a1 = mi * (c1 * s.a0 + c2 * s.a2);
    d.a2 = mi * c2 * s.a1;
    return d;
  };
  AmpState s{1.0, 0.0, 0.0};
  const double h = t / steps;
  for (int i = 0; i < steps; ++i) {
    const AmpState k1 = deriv(s);
    AmpState m{s.a0 + 0.5 * h * k1.a0, s.a1 + 0.5 * h * k1.a1,
               s.a2 + 0.5 * h * k1.a2};
    const AmpState k2 = deriv(m);
    m = {s.a0 + 0.5 * h * k2.a0, s.a1 + 0.5 * h * k2.a1,
         s.a2 + 0.5 * h * k2.a2};
    const AmpState k3 = deriv(m);
    m = {s.a0 + h * k3.a0, s.a1 + h * k3.a1, s.a2 + h * k3.a2};
    const AmpState k4 = deriv(m);
    s.a0 += h / 6.0 * (k1.a0 + 2.0 * k2.a0 + 2.0 * k3.a0 + k4.a0);
    s.a1 += h / 6.0 * (k1.a1 + 2.0 * k2.a1 + 2.0 * k3.a1 + k4.a1);
    s.a2 += h / 6.0 * (k1.a2 + 2.0 * k2.a2 + 2.0 * k3.a2 + k4.a2);
  }
  return s;
}

void check_thermometry(Context &, std::vector<CheckResult> &out) {
  const double rabi = 2 * kPi * 50e3;
  const std::complex<double> root2(std::sqrt(2.0), 0);

  double worst = 0;
  const int ns[] = {0, 1, 2, 3, 5, 8, 13, 21, 34, 50};
  for (const SidebandColor color :
       {SidebandColor::red, SidebandColor::blue}) {
    for (const int n : ns) {
      double c1, c2;
      if (color == SidebandColor::red) {
        c1 = n >= 1 ? rabi * std::sqrt(2.0 * n) / 2 : 0.0;
        c2 = n >= 2 ? rabi * std::sqrt(2.0 * (n - 1)) / 2 : 0.0;
      } else {
        c1 = rabi * std::sqrt(2.0 * (n + 1)) / 2;
        c2 = rabi * std::sqrt(2.0 * (n + 2)) / 2;
      }
      const double w = std::max(std::hypot(c1, c2), rabi);
      for (int chk = 1; chk <= 8; ++chk) {
        const double t = chk * kPi / w;
        const AmpState ode = ladder_rk4(c1, c2, t, 12000 * chk);
        const SidebandAmplitudes cf = sideband_amplitudes(n, rabi, t, color);
        worst = std::max(worst, std::abs(ode.a0 - cf.a00));
        worst = std::max(worst, std::abs(ode.a1 - root2 * cf.a01));
        worst = std::max(worst, std::abs(ode.a2 - cf.a11));
        const double e_ode =
            std::norm(ode.a2) + 0.5 * std::norm(ode.a1);
        worst = std::max(
            worst, std::abs(e_ode - fock_excitation(n, rabi, t, color)));
      }
    }
  }
  push(out, 10, "sideband-closed-vs-ode", worst, 1e-9, worst < 1e-9,
       "worst closed-form vs RK4 deviation " + num(worst) +
           " over n <= 50, both sidebands");

  double norm_dev = 0;
  for (const SidebandColor color :
       {SidebandColor::red, SidebandColor::blue})
    for (int n = 0; n <= 50; ++n)
      for (int i = 0; i <= 20; ++i) {
        const SidebandAmplitudes a =
            sideband_amplitudes(n, rabi, i * 1e-6, color);
        norm_dev = std::max(
            norm_dev, std::abs(std::norm(a.a00) + 2 * std::norm(a.a01) +
                               std::norm(a.a11) - 1.0));
      }
  push(out, 10, "sideband-norm", norm_dev, 1e-12, norm_dev < 1e-12,
       "worst per-n norm deviation " + num(norm_dev));

  const SidebandModel model;
  const struct {
    double truth;
    AxialMode mode;
    const char *name;
  } cases[] = {{0.017, AxialMode::common, "nbar-recovery-cold"},
               {3.9, AxialMode::stretch, "nbar-recovery-hot"}};
  int case_index = 0;
  for (const auto &c : cases) {
    Rng rng(99 + case_index++);
    std::vector<ExcitationPoint> pts;
    for (int i = 0; i <= 120; ++i) {
      ExcitationPoint p;
      p.t = i * 5e-6;
      const double e =
          sideband_excitation(c.truth, model, c.mode, p.t, SidebandColor::red);
      p.sigma = 0.02 * std::max(e, 1e-3);
      p.excitation = e + p.sigma * rng.normal();
      pts.push_back(p);
    }
    const PhononFit fit = fit_mean_phonon(pts, model, c.mode,
                                          SidebandColor::red);
    const double rel = std::abs(fit.nbar - c.truth) / c.truth;
    push(out, 10, c.name, rel, 0.05, rel < 0.05,
         "true nbar " + num(c.truth) + ", fitted " + num(fit.nbar) + " +- " +
             num(fit.sigma));
  }
}

// ---------------------------------------------------------------- 11

MultipoleVector draw_setting(const TrapPotential &base, Rng &rng) {
  MultipoleVector set = base.dc;
  set.q20 *= rng.uniform(0.85, 1.15);
  set.q22 *= rng.uniform(0.85, 1.15);
  set.q2m2 = rng.uniform(-2e6, 2e6);
  set.q2m1 = rng.uniform(-2e6, 2e6);
  set.q21 = rng.uniform(-2e6, 2e6);
  set.f1m1 = rng.uniform(-10, 10);
  set.f10 = rng.uniform(-10, 10);
  set.f11 = rng.uniform(-10, 10);
  return set;
}

void check_calibration(Context &ctx, std::vector<CheckResult> &out) {
  Rng rng(7);
  const double scales[8] = {10, 10, 10, 2e7, 2e7, 2e7, 2e7, 2e7};
  Eigen::Matrix<double, 8, 8> astar = Eigen::Matrix<double, 8, 8>::Identity();
  Eigen::Matrix<double, 8, 1> bstar;
  for (int i = 0; i < 8; ++i) {
    astar(i, i) = 1 + rng.uniform(-0.05, 0.05);
    for (int j = 0; j < 8; ++j) {
      if (i == j)
        continue;
      const bool tilt_row = i == 3 || i == 4 || i == 6;
      astar(i, j) =
          tilt_row ? 0.0 : rng.uniform(-0.05, 0.05) * scales[i] / scales[j];
    }
    bstar[i] = rng.uniform(-0.05, 0.05) * scales[i];
  }

  const Eigen::Vector3d probe_k =
      (2 * kPi / 729e-9) * Eigen::Vector3d(1, 1, 1).normalized();
  auto true_trap = [&](const MultipoleVector &set) {
    TrapPotential t = ctx.trap;
    t.dc = MultipoleVector::from_vector(astar * set.to_vector() + bstar);
    return t;
  };

  std::vector<ObservableRecord> records;
  int attempts = 0;
  while (static_cast<int>(records.size()) < 35 && attempts < 1000) {
    ++attempts;
    const MultipoleVector set = draw_setting(ctx.trap, rng);
    try {
      ObservableRecord r = predict_observables(true_trap(set), probe_k);
      r.setting = set;
      for (int i = 0; i < 3; ++i) {
        r.frequencies[i] *= 1 + 1e-3 * rng.normal();
        r.displacement[i] *= 1 + 1e-3 * rng.normal();
        for (int j = 0; j < 3; ++j)
          r.axes(i, j) += 1e-3 * rng.normal();
      }
      records.push_back(r);
    } catch (const NumericalError &) {
    }
  }
  const CalibrationMap fit =
      fit_calibration(records, ctx.trap.rf, probe_k, true);

  double worst_single = 0;
  int held = 0;
  while (held < 12 && attempts < 2000) {
    ++attempts;
    const MultipoleVector set = draw_setting(ctx.trap, rng);
    try {
      const ObservableRecord truth =
          predict_observables(true_trap(set), probe_k);
      TrapPotential pred = ctx.trap;
      pred.dc = fit.apply(set);
      const ObservableRecord guess = predict_observables(pred, probe_k);
      worst_single = std::max(
          worst_single, ((guess.frequencies - truth.frequencies)
                             .cwiseQuotient(truth.frequencies))
                            .cwiseAbs()
                            .maxCoeff());
      ++held;
    } catch (const NumericalError &) {
    }
  }
  push(out, 11, "calibration-single-holdout", worst_single, 0.01,
       held == 12 && worst_single < 0.01,
       "worst single-ion frequency error " + num(100 * worst_single) +
           "% over " + num(held) + " held-out settings");

  double worst_mixed = 0;
  int mixed = 0;
  while (mixed < 8 && attempts < 3000) {
    ++attempts;
    const MultipoleVector set = draw_setting(ctx.trap, rng);
    try {
      const TrapPotential t_true = true_trap(set);
      TrapPotential t_pred = ctx.trap;
      t_pred.dc = fit.apply(set);
      const ModeSpectrum s_true = mode_spectrum(
          t_true, equilibrium_two_ion_analytic(t_true, ctx.casr));
      const ModeSpectrum s_pred = mode_spectrum(
          t_pred, equilibrium_two_ion_analytic(t_pred, ctx.casr));
      worst_mixed = std::max(
          worst_mixed, ((s_pred.frequencies - s_true.frequencies)
                            .cwiseQuotient(s_true.frequencies))
                           .cwiseAbs()
                           .maxCoeff());
      ++mixed;
    } catch (const NumericalError &) {
    }
  }
  push(out, 11, "calibration-mixed-holdout", worst_mixed, 0.02,
       mixed == 8 && worst_mixed < 0.02,
       "worst Ca-Sr mode-frequency error " + num(100 * worst_mixed) +
           "% over " + num(mixed) + " held-out settings");
}

template <typename F>
void guarded(std::vector<CheckResult> &out, int criterion, F &&f) {
  try {
    f();
  } catch (const std::exception &e) {
    push(out, criterion, "uncaught-exception", 0, 0, false, e.what());
  }
}

} // namespace

std::vector<CheckResult> run_verification(int threads) {
  Context ctx;
  std::vector<CheckResult> out;
  guarded(out, 1, [&] { check_two_ion_solver(ctx, out); });
  guarded(out, 2, [&] { check_mode_analysis(ctx, out); });
  guarded(out, 3, [&] { check_rotation_design(ctx, out); });
  guarded(out, 4, [&] { check_electrode_solutions(ctx, out); });
  guarded(out, 5, [&] { check_filter_model(ctx, out); });
  guarded(out, 6, [&] { check_precompensation(ctx, out); });
  guarded(out, 7, [&] { check_static_dynamics(ctx, out); });
  guarded(out, 8, [&] { check_mixed_species(ctx, out); });
  guarded(out, 9, [&] { check_optimizer(ctx, out, threads); });
  guarded(out, 10, [&] { check_thermometry(ctx, out); });
  guarded(out, 11, [&] { check_calibration(ctx, out); });
  return out;
}

std::string verification_csv(const std::vector<CheckResult> &results) {
  std::ostringstream os;
  os << "criterion,name,value,threshold,pass,detail\n";
  for (const auto &r : results) {
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), ',', ';');
    os << r.criterion << ',' << r.name << ',' << format_double(r.value)
       << ',' << format_double(r.threshold) << ','
       << (r.pass ? "true" : "false") << ',' << detail << '\n';
  }
  return os.str();
}

} // namespace iontrap
