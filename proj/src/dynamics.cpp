#include "iontrap/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/rng.hpp"

namespace iontrap {

TrapPotential DrivenPotential::at(double t) const {
  TrapPotential p;
  p.rf = rf;
  const int n = static_cast<int>(samples.cols());
  if (n == 1 || t <= 0) {
    p.dc = MultipoleVector::from_vector(samples.col(0));
    return p;
  }
  const double f = t / sample_period;
  const int i0 = static_cast<int>(f);
  if (i0 >= n - 1) {
    p.dc = MultipoleVector::from_vector(samples.col(n - 1));
    return p;
  }
  const double frac = f - i0;
  p.dc = MultipoleVector::from_vector((1.0 - frac) * samples.col(i0) +
                                      frac * samples.col(i0 + 1));
  return p;
}

DrivenPotential DrivenPotential::from_sequence(const MultipoleSequence &seq,
                                               const RfPseudoPotential &rf) {
  DrivenPotential dp;
  dp.rf = rf;
  dp.sample_period = seq.schedule.sample_period;
  dp.samples.resize(8, static_cast<int>(seq.steps.size()));
  for (int i = 0; i < static_cast<int>(seq.steps.size()); ++i)
    dp.samples.col(i) = seq.steps[i].to_vector();
  return dp;
}

DrivenPotential realized_drive(const Eigen::MatrixXd &voltage_samples,
                               double sample_period,
                               const LinearStateModel &filter,
                               const MultipoleMatrix &mm,
                               const CalibrationMap &cal,
                               const RfPseudoPotential &rf, int substeps,
                               int settle_steps) {
  const int k = static_cast<int>(voltage_samples.rows());
  const int t = static_cast<int>(voltage_samples.cols());
  if (t < 1)
    throw ConfigError("realized_drive: empty voltage sequence");
  if (filter.inputs() != k || filter.outputs() != k ||
      static_cast<int>(mm.m.cols()) != k)
    throw ConfigError("realized_drive: channel counts disagree");
  if (substeps < 1 || settle_steps < 0)
    throw ConfigError("realized_drive: bad substeps or settle_steps");

  const Eigen::MatrixXd out_map = cal.a * mm.m;
  const DenseOutputModel dom =
      dense_output(filter, out_map, sample_period, substeps);
  return realized_drive(voltage_samples, dom, cal.b, rf, settle_steps);
}

DrivenPotential realized_drive(const Eigen::MatrixXd &voltage_samples,
                               const DenseOutputModel &dom,
                               const Eigen::Matrix<double, 8, 1> &offset,
                               const RfPseudoPotential &rf,
                               int settle_steps) {
  const int t = static_cast<int>(voltage_samples.cols());
  if (t < 1)
    throw ConfigError("realized_drive: empty voltage sequence");
  if (dom.pu.cols() != voltage_samples.rows())
    throw ConfigError("realized_drive: channel counts disagree");
  if (settle_steps < 0)
    throw ConfigError("realized_drive: bad settle_steps");
  const int substeps = dom.substeps;
  const int ns = static_cast<int>(dom.step.ad.rows());

  Eigen::VectorXd x;
  if (ns > 0)
    x = (Eigen::MatrixXd::Identity(ns, ns) - dom.step.ad)
            .partialPivLu()
            .solve(dom.step.bd * voltage_samples.col(0));
  else
    x.resize(0);

  const int total_in = t + settle_steps;
  DrivenPotential dp;
  dp.rf = rf;
  dp.sample_period = dom.step.sample_period / substeps;
  dp.samples.resize(8, total_in * substeps + 1);
  int col = 0;
  for (int i = 0; i < total_in; ++i) {
    const Eigen::VectorXd u = voltage_samples.col(std::min(i, t - 1));
    for (int j = 0; j < substeps; ++j, ++col)
      dp.samples.col(col) = dom.px.middleRows(8 * j, 8) * x +
                            dom.pu.middleRows(8 * j, 8) * u + offset;
    if (ns > 0)
      x = dom.step.ad * x + dom.step.bd * u;
  }
  dp.samples.col(col) = dom.px.topRows(8) * x +
                        dom.pu.topRows(8) * voltage_samples.col(t - 1) +
                        offset;
  return dp;
}

namespace {

std::string format_time(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", t);
  return buf;
}

struct ForceModel {
  const DrivenPotential *drive = nullptr;
  const std::vector<IonSpecies> *species = nullptr;
  RfMode mode = RfMode::pseudopotential;
  std::vector<double> vrf; // per-ion pseudopotential curvature, V/m^2
  double kappa = 0;
  double omega_rf = 0;

  void operator()(double t, const Eigen::VectorXd &x,
                  Eigen::VectorXd &f) const {
    const TrapPotential p = drive->at(t);
    const auto [e, v] = multipole_to_matrix(p.dc);
    const int n = static_cast<int>(species->size());
    const double rf_now =
        mode == RfMode::full_rf ? kappa * std::cos(omega_rf * t) : 0.0;
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d xi = x.segment<3>(3 * i);
      Eigen::Vector3d g = v * xi - e;
      if (mode == RfMode::pseudopotential) {
        g.x() += vrf[i] * xi.x();
        g.y() += vrf[i] * xi.y();
      } else {
        g.x() += rf_now * xi.x();
        g.y() -= rf_now * xi.y();
      }
      f.segment<3>(3 * i) = -(*species)[i].charge * g;
    }
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const Eigen::Vector3d d =
            x.segment<3>(3 * i) - x.segment<3>(3 * j);
        const double r = d.norm();
        if (r < 1e-12)
          throw NumericalError("simulate: ions collided at t = " +
                               format_time(t) + " s");
        const Eigen::Vector3d fc = constants::coulomb_constant *
                                   (*species)[i].charge *
                                   (*species)[j].charge * d / (r * r * r);
        f.segment<3>(3 * i) += fc;
        f.segment<3>(3 * j) -= fc;
      }
  }
};

Eigen::VectorXd stack_positions(const CrystalConfiguration &cfg) {
  Eigen::VectorXd x(3 * cfg.ion_count());
  for (int i = 0; i < cfg.ion_count(); ++i)
    x.segment<3>(3 * i) = cfg.position(i);
  return x;
}

CrystalConfiguration equilibrium_for(const TrapPotential &trap,
                                     const std::vector<IonSpecies> &species) {
  if (species.size() == 2)
    return equilibrium_two_ion_analytic(trap, species);
  if (species.size() == 1) {
    const Eigen::Matrix3d v = trap.curvature(species[0]);
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(v);
    if (es.eigenvalues().minCoeff() <= 0)
      throw NumericalError("simulate: initial potential is unstable");
    CrystalConfiguration cfg;
    cfg.species = species;
    cfg.positions = es.eigenvectors() *
                    (es.eigenvectors().transpose() * trap.field())
                        .cwiseQuotient(es.eigenvalues());
    return cfg;
  }
  Eigen::VectorXd guess = Eigen::VectorXd::Zero(3 * species.size());
  for (int i = 0; i < static_cast<int>(species.size()); ++i)
    guess[3 * i + 2] = 5e-6 * (i - 0.5 * (static_cast<int>(species.size()) - 1));
  return equilibrium_numeric(trap, species, guess);
}

} // namespace

Trajectory simulate(const DrivenPotential &drive,
                    const std::vector<IonSpecies> &species,
                    const SimulationConfig &cfg) {
  if (species.empty())
    throw ConfigError("simulate: no ions");
  if (drive.samples.cols() < 1)
    throw ConfigError("simulate: empty drive");
  if (drive.samples.cols() > 1 && drive.sample_period <= 0)
    throw ConfigError("simulate: sample period must be positive");
  const int n = static_cast<int>(species.size());
  const int dim = 3 * n;

  const TrapPotential start = drive.at(0);
  const CrystalConfiguration eq = equilibrium_for(start, species);
  const ModeSpectrum sp = mode_spectrum(start, eq);
  if (!sp.stable)
    throw NumericalError("simulate: initial potential is unstable");

  double t_fast = 2.0 * kPi / sp.frequencies.maxCoeff();
  if (cfg.rf_mode == RfMode::full_rf)
    t_fast = std::min(t_fast, 2.0 * kPi / drive.rf.drive_frequency);
  double dt = cfg.time_step;
  if (dt <= 0)
    dt = t_fast / 72.0;
  else if (dt > t_fast / 50.0)
    throw ConfigError("simulate: time step " + format_time(dt) +
                      " s gives fewer than 50 steps on the fastest period " +
                      format_time(t_fast) + " s");

  const double total = drive.duration() + cfg.settle_time;
  long nsteps = total > 0 ? std::lround(std::ceil(total / dt - 1e-9)) : 0;
  if (nsteps > 0)
    dt = total / static_cast<double>(nsteps);

  Eigen::VectorXd x = stack_positions(eq);
  Eigen::VectorXd vel = Eigen::VectorXd::Zero(dim);
  if (cfg.initial_position) {
    if (cfg.thermal_init)
      throw ConfigError("simulate: choose thermal_init or an explicit start, "
                        "not both");
    if (cfg.initial_position->size() != dim)
      throw ConfigError("simulate: initial position has the wrong size");
    x = *cfg.initial_position;
  }
  if (cfg.initial_velocity) {
    if (cfg.initial_velocity->size() != dim)
      throw ConfigError("simulate: initial velocity has the wrong size");
    vel = *cfg.initial_velocity;
  }

  Eigen::VectorXd mass(dim), dinv(dim);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) {
      mass[3 * i + a] = species[i].mass;
      dinv[3 * i + a] = 1.0 / std::sqrt(species[i].mass);
    }

  if (cfg.thermal_init) {
    if (cfg.temperature < 0)
      throw ConfigError("simulate: negative temperature");
    Rng rng(cfg.seed);
    Eigen::VectorXd xi = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd xidot = Eigen::VectorXd::Zero(dim);
    for (int k = 0; k < dim; ++k) {
      const double energy =
          rng.exponential(constants::boltzmann * cfg.temperature);
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      const double omega = sp.frequencies[k];
      xi += sp.mode_vectors.col(k) *
            (std::sqrt(2.0 * energy) / omega * std::cos(phase));
      xidot += sp.mode_vectors.col(k) *
               (std::sqrt(2.0 * energy) * std::sin(phase));
    }
    x += dinv.cwiseProduct(xi);
    vel += dinv.cwiseProduct(xidot);
  }

  ForceModel fm;
  fm.drive = &drive;
  fm.species = &species;
  fm.mode = cfg.rf_mode;
  fm.kappa = drive.rf.drive_curvature();
  fm.omega_rf = drive.rf.drive_frequency;
  fm.vrf.resize(n);
  for (int i = 0; i < n; ++i)
    fm.vrf[i] = drive.rf.curvature(species[i]);

  long stride;
  if (cfg.record_interval > 0)
    stride = std::max<long>(1, std::lround(cfg.record_interval / dt));
  else
    stride = std::max<long>(1, nsteps / 4000);

  std::vector<double> rec_t;
  std::vector<Eigen::VectorXd> rec_x, rec_v;
  rec_t.reserve(static_cast<std::size_t>(nsteps / stride + 2));

  Trajectory traj;
  traj.species = species;
  traj.rf = drive.rf;
  traj.rf_mode = cfg.rf_mode;
  traj.time_step = dt;
  traj.start_multipoles = start.dc;
  traj.end_multipoles = drive.at(total).dc;
  traj.initial_position = x;
  traj.initial_velocity = vel;

  Eigen::VectorXd force(dim), acc(dim);
  fm(0.0, x, force);
  acc = force.cwiseQuotient(mass);
  rec_t.push_back(0.0);
  rec_x.push_back(x);
  rec_v.push_back(vel);

  for (long k = 0; k < nsteps; ++k) {
    vel += 0.5 * dt * acc;
    x += dt * vel;
    const double t = static_cast<double>(k + 1) * dt;
    for (int i = 0; i < n; ++i)
      if (x.segment<3>(3 * i).norm() > cfg.escape_radius)
        throw IonLossError("ion " + std::to_string(i) + " (" +
                           species[i].label + ") left the trap at t = " +
                           format_time(t) + " s");
    fm(t, x, force);
    acc = force.cwiseQuotient(mass);
    vel += 0.5 * dt * acc;
    if ((k + 1) % stride == 0 || k + 1 == nsteps) {
      rec_t.push_back(t);
      rec_x.push_back(x);
      rec_v.push_back(vel);
    }
  }

  const int m = static_cast<int>(rec_t.size());
  traj.times.resize(m);
  traj.positions.resize(dim, m);
  traj.velocities.resize(dim, m);
  for (int i = 0; i < m; ++i) {
    traj.times[i] = rec_t[i];
    traj.positions.col(i) = rec_x[i];
    traj.velocities.col(i) = rec_v[i];
  }
  traj.final_position = x;
  traj.final_velocity = vel;
  traj.final_time = nsteps > 0 ? total : 0.0;
  return traj;
}

Trajectory simulate(const MultipoleSequence &seq,
                    const std::vector<IonSpecies> &species,
                    const RfPseudoPotential &rf, const SimulationConfig &cfg) {
  return simulate(DrivenPotential::from_sequence(seq, rf), species, cfg);
}

Trajectory simulate(const Eigen::MatrixXd &voltage_samples,
                    double sample_period, const MultipoleMatrix &mm,
                    const std::vector<IonSpecies> &species,
                    const RfPseudoPotential &rf, const SimulationConfig &cfg) {
  if (static_cast<int>(voltage_samples.rows()) !=
      static_cast<int>(mm.m.cols()))
    throw ConfigError("simulate: voltage channels do not match the "
                      "multipole matrix");
  DrivenPotential dp;
  dp.rf = rf;
  dp.sample_period = sample_period;
  dp.samples = mm.m * voltage_samples;
  return simulate(dp, species, cfg);
}

HeatingResult mode_energy(const Trajectory &traj,
                          const CrystalConfiguration &equilibrium,
                          const ModeSpectrum &spectrum,
                          double angle_tolerance) {
  const int n = traj.ion_count();
  const int dim = 3 * n;
  const Eigen::Matrix<double, 8, 1> s0 = traj.start_multipoles.to_vector();
  const Eigen::Matrix<double, 8, 1> s1 = traj.end_multipoles.to_vector();
  const double scale = std::max({s0.norm(), s1.norm(), 1e-30});
  if ((s1 - s0).norm() > 1e-6 * scale)
    throw NumericalError(
        "mode_energy: the drive ends away from its starting potential; "
        "extend the settle time or use a sequence that returns to its "
        "start");
  if (!spectrum.stable)
    throw NumericalError("mode_energy: end potential is unstable");
  if (static_cast<int>(spectrum.frequencies.size()) != dim)
    throw ConfigError("mode_energy: spectrum size does not match the ion "
                      "count");

  Eigen::VectorXd dsqrt(dim);
  for (int i = 0; i < n; ++i)
    dsqrt.segment<3>(3 * i).setConstant(std::sqrt(traj.species[i].mass));
  const Eigen::VectorXd xeq = stack_positions(equilibrium);

  const auto energies = [&](const Eigen::VectorXd &x,
                            const Eigen::VectorXd &v) {
    const Eigen::VectorXd xi = dsqrt.cwiseProduct(x - xeq);
    const Eigen::VectorXd pi = dsqrt.cwiseProduct(v);
    Eigen::VectorXd e(dim);
    for (int k = 0; k < dim; ++k) {
      const double q = spectrum.mode_vectors.col(k).dot(xi);
      const double p = spectrum.mode_vectors.col(k).dot(pi);
      const double w = spectrum.frequencies[k];
      e[k] = 0.5 * (p * p + w * w * q * q);
    }
    return e;
  };
  const Eigen::VectorXd e0 =
      energies(traj.initial_position, traj.initial_velocity);
  const Eigen::VectorXd e1 = energies(traj.final_position, traj.final_velocity);

  HeatingResult hr;
  hr.mode_labels = spectrum.labels;
  hr.delta_n.resize(dim);
  for (int k = 0; k < dim; ++k)
    hr.delta_n[k] =
        (e1[k] - e0[k]) / (constants::hbar * spectrum.frequencies[k]);

  const int m = static_cast<int>(traj.times.size());
  hr.micromotion_times = traj.times;
  hr.micromotion_trace.resize(m);
  for (int i = 0; i < m; ++i) {
    double worst = 0;
    for (int j = 0; j < n; ++j) {
      const double y = traj.positions(3 * j + 1, i);
      hr.peak_y_displacement = std::max(hr.peak_y_displacement, std::abs(y));
      worst = std::max(worst, 0.5 * traj.rf.stability_q(traj.species[j]) *
                                  std::abs(y));
    }
    hr.micromotion_trace[i] = worst;
  }

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i)
    order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return traj.final_position[3 * a + 2] < traj.final_position[3 * b + 2];
  });
  for (int i : order)
    hr.final_order.push_back(traj.species[i].label);

  if (n == 2 && m > 1) {
    double prev = 0, crossings = 0;
    double theta = 0;
    for (int i = 0; i < m; ++i) {
      const Eigen::Vector3d u = traj.positions.col(i).head<3>() -
                                traj.positions.col(i).tail<3>();
      double raw = std::atan2(u.x(), u.z());
      if (i == 0) {
        theta = raw;
      } else {
        double d = raw - std::fmod(theta, 2.0 * kPi);
        d -= 2.0 * kPi * std::round(d / (2.0 * kPi));
        theta += d;
        if ((prev - kPi / 2) * (theta - kPi / 2) < 0 ||
            (theta == kPi / 2 && prev != kPi / 2))
          crossings += 1;
      }
      prev = theta;
    }
    hr.success = crossings == 1 && std::abs(theta - kPi) < angle_tolerance;
  }
  return hr;
}

HeatingResult mode_energy(const Trajectory &traj, double angle_tolerance) {
  TrapPotential trap;
  trap.dc = traj.end_multipoles;
  trap.rf = traj.rf;
  const CrystalConfiguration eq = equilibrium_for(trap, traj.species);
  const ModeSpectrum sp = mode_spectrum(trap, eq);
  return mode_energy(traj, eq, sp, angle_tolerance);
}

double axial_heating(const HeatingResult &result) {
  double sum = 0;
  for (int k = 0; k < result.delta_n.size(); ++k)
    if (!result.mode_labels[k].empty() && result.mode_labels[k][0] == 'z')
      sum += result.delta_n[k];
  return sum;
}

double crystal_energy(const TrapPotential &trap,
                      const std::vector<IonSpecies> &species,
                      const Eigen::VectorXd &position,
                      const Eigen::VectorXd &velocity) {
  double e = potential_energy(position, species, trap);
  for (int i = 0; i < static_cast<int>(species.size()); ++i)
    e += 0.5 * species[i].mass * velocity.segment<3>(3 * i).squaredNorm();
  return e;
}

namespace {

std::string order_label(const std::vector<IonSpecies> &species,
                        const Eigen::VectorXd &x) {
  if (x[2] < x[5])
    return species[0].label + "," + species[1].label;
  return species[1].label + "," + species[0].label;
}

} // namespace

std::string OffsetSweepResult::regime(int i) const {
  const auto &o = outcomes.at(i);
  if (o[0] == "loss" || o[1] == "loss")
    return "loss";
  if (o[0] == o[1])
    return "always " + o[0];
  if (o[0] == initial_orders[1] && o[1] == initial_orders[0])
    return "bidirectional";
  if (o[0] == initial_orders[0] && o[1] == initial_orders[1])
    return "stationary";
  return "mixed";
}

OffsetSweepResult offset_field_sweep(const MultipoleSequence &seq,
                                     const std::vector<IonSpecies> &species,
                                     const RfPseudoPotential &rf,
                                     const std::vector<double> &e_x_values,
                                     const SimulationConfig &cfg) {
  if (species.size() != 2)
    throw ConfigError("offset_field_sweep: needs exactly two ions");
  if (seq.steps.empty())
    throw ConfigError("offset_field_sweep: empty sequence");

  OffsetSweepResult res;
  res.e_x = e_x_values;
  res.initial_orders = {species[0].label + "," + species[1].label,
                        species[1].label + "," + species[0].label};

  for (const double ex : e_x_values) {
    MultipoleSequence shifted = seq;
    for (auto &step : shifted.steps)
      step.f11 += ex;
    TrapPotential start;
    start.rf = rf;
    start.dc = shifted.steps.front();

    std::array<std::string, 2> outcome{"loss", "loss"};
    Eigen::VectorXd base;
    bool have_base = false;
    try {
      base = stack_positions(equilibrium_two_ion_analytic(start, species));
      have_base = true;
    } catch (const NumericalError &) {
    }

    for (int j = 0; j < 2 && have_base; ++j) {
      Eigen::VectorXd guess = base;
      if (order_label(species, base) != res.initial_orders[j]) {
        guess.head<3>() = base.tail<3>();
        guess.tail<3>() = base.head<3>();
      }
      try {
        const CrystalConfiguration eq =
            equilibrium_numeric(start, species, guess);
        const Eigen::VectorXd x0 = stack_positions(eq);
        if (order_label(species, x0) != res.initial_orders[j])
          continue;
        if (!mode_spectrum(start, eq).stable)
          continue;
        SimulationConfig run = cfg;
        run.initial_position = x0;
        const Trajectory traj = simulate(shifted, species, rf, run);
        outcome[j] = order_label(species, traj.final_position);
      } catch (const IonLossError &) {
        outcome[j] = "loss";
      } catch (const NumericalError &) {
      }
    }
    res.outcomes.push_back(outcome);
  }
  return res;
}

} // namespace iontrap
