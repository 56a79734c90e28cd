#include "iontrap/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "iontrap/errors.hpp"

namespace iontrap {

RotationSchedule RotationSchedule::uniform(int steps, double sample_period) {
  if (steps < 1)
    throw ConfigError("RotationSchedule: need at least one step");
  RotationSchedule s;
  s.sample_period = sample_period;
  s.angles.resize(steps + 1);
  for (int i = 0; i <= steps; ++i)
    s.angles[i] = kPi * i / steps;
  return s;
}

namespace {

constexpr double kOmegaRef = 2.0 * kPi * 1e6;
// Internal stiffening of the angle term: the target direction acts as a
// constraint, not a preference, so its residual must dominate the bounded
// spectral terms whenever the axis is off by more than the tolerance.
constexpr double kAngleStiffener = 1e6;
constexpr double kMidpointScale = 1e7; // 10 per um of midpoint offset
// Degeneracy pressure saturates once modes are within 10 kHz; an unbounded
// 1/gap would otherwise override the angle constraint at avoided crossings.
constexpr double kGapFloor = 1e-2 * kOmegaRef;

// Greedy max-overlap assignment of current eigenvector columns to
// reference columns; follows modes through crossings along the sequence.
std::vector<int> match_modes(const Eigen::MatrixXd &ref,
                             const Eigen::MatrixXd &cur) {
  const int n = static_cast<int>(ref.cols());
  Eigen::MatrixXd o = (ref.transpose() * cur).cwiseAbs();
  std::vector<int> map(n, -1);
  std::vector<bool> used_ref(n, false), used_cur(n, false);
  for (int pick = 0; pick < n; ++pick) {
    int bi = -1, bj = -1;
    double best = -1;
    for (int i = 0; i < n; ++i) {
      if (used_ref[i])
        continue;
      for (int j = 0; j < n; ++j) {
        if (used_cur[j])
          continue;
        if (o(i, j) > best) {
          best = o(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    map[bi] = bj;
    used_ref[bi] = true;
    used_cur[bj] = true;
  }
  return map;
}

struct StepContext {
  const TrapPotential *base = nullptr;
  const std::vector<IonSpecies> *species = nullptr;
  const CostWeights *weights = nullptr;
  double theta = 0;
  const Eigen::VectorXd *omega0 = nullptr;      // step-0 tracked frequencies
  const Eigen::MatrixXd *ref_vectors = nullptr; // previous accepted step
};

bool step_residuals(const StepContext &ctx, const Eigen::Matrix<double, 8, 1> &v,
                    Eigen::VectorXd &out, CrystalConfiguration *cfg_out,
                    ModeSpectrum *spec_out) {
  TrapPotential trap = *ctx.base;
  trap.dc = MultipoleVector::from_vector(v);
  CrystalConfiguration cfg;
  try {
    cfg = equilibrium_two_ion_analytic(trap, *ctx.species);
  } catch (const NumericalError &) {
    return false;
  }
  const ModeSpectrum sp = mode_spectrum(trap, cfg);
  if (!sp.stable)
    return false;

  const CostWeights &w = *ctx.weights;
  out.setZero(23);

  Eigen::Vector3d u = (cfg.position(0) - cfg.position(1)).normalized();
  const Eigen::Vector3d t(std::sin(ctx.theta), 0.0, std::cos(ctx.theta));
  if (u.dot(t) < 0)
    u = -u;
  out.segment<3>(0) = std::sqrt(w.angle) * kAngleStiffener * u.cross(t);

  if (w.degeneracy > 0) {
    const double s = std::sqrt(w.degeneracy);
    for (int j = 0; j < 5; ++j) {
      const double gap =
          std::max(sp.frequencies[j + 1] - sp.frequencies[j], kGapFloor);
      out[3 + j] = s * kOmegaRef / gap;
    }
  }
  if (w.stiffness > 0) {
    const double s = std::sqrt(w.stiffness);
    for (int i = 0; i < 6; ++i)
      out[8 + i] =
          s * kOmegaRef / std::max(sp.frequencies[i], 1e-6 * kOmegaRef);
  }
  if (w.drift > 0) {
    const double s = std::sqrt(w.drift);
    const std::vector<int> map = match_modes(*ctx.ref_vectors, sp.mode_vectors);
    for (int i = 0; i < 6; ++i)
      out[14 + i] =
          s * (sp.frequencies[map[i]] - (*ctx.omega0)[i]) / kOmegaRef;
  }
  const Eigen::Vector3d mid = 0.5 * (cfg.position(0) + cfg.position(1));
  out.segment<3>(20) = kMidpointScale * mid;

  if (cfg_out)
    *cfg_out = cfg;
  if (spec_out)
    *spec_out = sp;
  return true;
}

Eigen::Matrix<double, 8, 1> lm_step(const StepContext &ctx,
                                    const Eigen::Matrix<double, 8, 1> &seed,
                                    double quad_scale, int step_index) {
  Eigen::Matrix<double, 8, 1> v = seed;
  Eigen::VectorXd r;
  if (!step_residuals(ctx, v, r, nullptr, nullptr))
    throw NumericalError("design_rotation: unstable potential at step " +
                         std::to_string(step_index));
  double cost = r.squaredNorm();

  Eigen::Matrix<double, 8, 1> scales;
  scales << 10.0, 10.0, 10.0, quad_scale, quad_scale, quad_scale, quad_scale,
      quad_scale;

  double mu = 1e-3;
  int stall = 0;
  for (int iter = 0; iter < 80 && stall < 2 && cost > 1e-24; ++iter) {
    Eigen::MatrixXd jac(r.size(), 8);
    for (int j = 0; j < 8; ++j) {
      const double h = 1e-6 * scales[j];
      Eigen::Matrix<double, 8, 1> vp = v;
      vp[j] += h;
      Eigen::VectorXd rp;
      if (step_residuals(ctx, vp, rp, nullptr, nullptr)) {
        jac.col(j) = (rp - r) / h;
      } else {
        vp[j] = v[j] - h;
        if (step_residuals(ctx, vp, rp, nullptr, nullptr))
          jac.col(j) = (r - rp) / h;
        else
          jac.col(j).setZero();
      }
    }
    const Eigen::Matrix<double, 8, 8> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 8, 1> jtr = jac.transpose() * r;
    Eigen::Matrix<double, 8, 1> diag = jtj.diagonal();
    const double dmax = diag.maxCoeff();
    diag = diag.cwiseMax(1e-12 * dmax + 1e-300);

    bool improved = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::Matrix<double, 8, 8> lhs = jtj;
      lhs.diagonal() += mu * diag;
      const Eigen::Matrix<double, 8, 1> delta = lhs.ldlt().solve(-jtr);
      Eigen::VectorXd rt;
      if (delta.allFinite() &&
          step_residuals(ctx, v + delta, rt, nullptr, nullptr) &&
          rt.squaredNorm() < cost) {
        const double newcost = rt.squaredNorm();
        if (newcost > cost * (1.0 - 1e-12))
          ++stall;
        else
          stall = 0;
        v += delta;
        r = rt;
        cost = newcost;
        mu = std::max(mu * 0.3, 1e-14);
        improved = true;
        break;
      }
      mu *= 4.0;
      if (mu > 1e14)
        break;
    }
    if (!improved)
      break;
  }
  return v;
}

Eigen::Matrix<double, 8, 1> rotated_seed(const TrapPotential &trap0,
                                         const IonSpecies &species,
                                         double theta) {
  const auto [e0, vdc0] = multipole_to_matrix(trap0.dc);
  const double vrf = trap0.rf.curvature(species);
  Eigen::Matrix3d vtot = vdc0;
  vtot(0, 0) += vrf;
  vtot(1, 1) += vrf;
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix3d rot;
  rot << c, 0, s, 0, 1, 0, -s, 0, c;
  Eigen::Matrix3d vt = rot * vtot * rot.transpose();
  vt(0, 0) -= vrf;
  vt(1, 1) -= vrf;
  return matrix_to_multipole(rot * e0, vt).to_vector();
}

MultipoleSequence design_once(const TrapPotential &trap0,
                              const std::vector<IonSpecies> &species,
                              const CostWeights &weights,
                              const RotationSchedule &schedule) {
  const int n = schedule.step_count();
  const CrystalConfiguration cfg0 = equilibrium_two_ion_analytic(trap0, species);
  const ModeSpectrum sp0 = mode_spectrum(trap0, cfg0);
  if (!sp0.stable)
    throw NumericalError("design_rotation: initial potential is unstable");
  Eigen::Vector3d u0 = (cfg0.position(0) - cfg0.position(1)).normalized();
  if (u0.z() < 0)
    u0 = -u0;
  if (u0.cross(Eigen::Vector3d(0, 0, 1)).squaredNorm() >= 1e-8)
    throw NumericalError(
        "design_rotation: initial crystal is not aligned with the trap axis");

  const Eigen::VectorXd omega0 = sp0.frequencies;
  Eigen::MatrixXd ref_vectors = sp0.mode_vectors;
  const bool equal = species[0] == species[1];

  double quad_scale = 1e6;
  for (int i = 3; i < 8; ++i)
    quad_scale = std::max(quad_scale, std::abs(trap0.dc[i]));

  MultipoleSequence seq;
  seq.schedule = schedule;
  seq.steps.resize(n + 1);
  seq.steps[0] = trap0.dc;

  Eigen::Matrix<double, 8, 1> v_prev = trap0.dc.to_vector();
  for (int step = 1; step <= n; ++step) {
    StepContext ctx;
    ctx.base = &trap0;
    ctx.species = &species;
    ctx.weights = &weights;
    ctx.theta = schedule.angles[step];
    ctx.omega0 = &omega0;
    ctx.ref_vectors = &ref_vectors;

    const Eigen::Matrix<double, 8, 1> seed =
        equal ? rotated_seed(trap0, species[0], ctx.theta) : v_prev;
    Eigen::Matrix<double, 8, 1> v = lm_step(ctx, seed, quad_scale, step);

    const auto angle_ok = [&](const Eigen::Matrix<double, 8, 1> &vv,
                              Eigen::VectorXd &r, CrystalConfiguration &cfg,
                              ModeSpectrum &sp) {
      if (!step_residuals(ctx, vv, r, &cfg, &sp))
        throw NumericalError("design_rotation: unstable potential at step " +
                             std::to_string(step));
      Eigen::Vector3d u = (cfg.position(0) - cfg.position(1)).normalized();
      const Eigen::Vector3d t(std::sin(ctx.theta), 0.0, std::cos(ctx.theta));
      if (u.dot(t) < 0)
        u = -u;
      return u.cross(t).squaredNorm() < 1e-8;
    };

    Eigen::VectorXd r;
    CrystalConfiguration cfg;
    ModeSpectrum sp;
    if (!angle_ok(v, r, cfg, sp)) {
      // Approach the target angle through intermediate solves when the
      // direct warm start stalls, e.g. across an avoided mode crossing.
      const double theta_prev = schedule.angles[step - 1];
      Eigen::Matrix<double, 8, 1> vtry = v_prev;
      const int subs = 8;
      for (int ss = 1; ss <= subs; ++ss) {
        StepContext sub = ctx;
        sub.theta = theta_prev + (ctx.theta - theta_prev) * ss / subs;
        vtry = lm_step(sub, vtry, quad_scale, step);
      }
      v = vtry;
      if (!angle_ok(v, r, cfg, sp))
        throw NumericalError(
            "design_rotation: angle constraint not met at step " +
            std::to_string(step));
    }

    ref_vectors = sp.mode_vectors;
    v_prev = v;
    seq.steps[step] = MultipoleVector::from_vector(v);
  }
  return seq;
}

// Below these spans a channel is numerical noise around a constant, not a
// waveform: 1e-6 V/m displaces the crystal by under a femtometre and
// 1e-2 V/m^2 is ppb of the confining curvature.
double channel_noise_floor(int c) { return c < 3 ? 1e-6 : 1e-2; }

bool smooth_enough(const MultipoleSequence &seq) {
  const int t = static_cast<int>(seq.steps.size());
  for (int c = 0; c < 8; ++c) {
    double lo = seq.steps[0][c], hi = lo;
    for (int i = 1; i < t; ++i) {
      lo = std::min(lo, seq.steps[i][c]);
      hi = std::max(hi, seq.steps[i][c]);
    }
    const double range = hi - lo;
    if (range <= channel_noise_floor(c))
      continue;
    for (int i = 0; i + 1 < t; ++i)
      if (std::abs(seq.steps[i + 1][c] - seq.steps[i][c]) > 0.05 * range)
        return false;
  }
  return true;
}

RotationSchedule refine(const RotationSchedule &s) {
  RotationSchedule out;
  out.sample_period = s.sample_period;
  const int n = s.step_count();
  out.angles.resize(2 * n + 1);
  for (int i = 0; i < n; ++i) {
    out.angles[2 * i] = s.angles[i];
    out.angles[2 * i + 1] = 0.5 * (s.angles[i] + s.angles[i + 1]);
  }
  out.angles[2 * n] = s.angles[n];
  return out;
}

} // namespace

MultipoleSequence design_rotation(const TrapPotential &trap0,
                                  const std::vector<IonSpecies> &species,
                                  const CostWeights &weights,
                                  const RotationSchedule &schedule) {
  if (species.size() != 2)
    throw ConfigError("design_rotation: needs exactly two ions");
  if (!(weights.angle > 0))
    throw ConfigError("design_rotation: angle weight must be positive");
  const int n = schedule.step_count();
  if (n < 2)
    throw ConfigError("design_rotation: schedule too short");
  if (std::abs(schedule.angles[0]) > 1e-12 ||
      std::abs(schedule.angles[n] - kPi) > 1e-12)
    throw ConfigError("design_rotation: schedule must run from 0 to pi");
  for (int i = 0; i < n; ++i)
    if (schedule.angles[i + 1] < schedule.angles[i])
      throw ConfigError("design_rotation: schedule must be monotone");

  RotationSchedule sched = schedule;
  for (int attempt = 0;; ++attempt) {
    MultipoleSequence seq = design_once(trap0, species, weights, sched);
    if (smooth_enough(seq))
      return seq;
    if (attempt >= 3)
      throw NumericalError("design_rotation: sequence stays non-smooth after "
                           "refining the schedule three times");
    sched = refine(sched);
  }
}

WaveformParams fourier_fit(const MultipoleSequence &seq, int p_max) {
  if (p_max < 1)
    throw ConfigError("fourier_fit: p_max must be >= 1");
  const int t = static_cast<int>(seq.steps.size());
  if (t < p_max + 2)
    throw ConfigError("fourier_fit: sequence too short for the order");
  const int n = t - 1;

  Eigen::MatrixXd basis(t, p_max + 1);
  basis.col(0).setOnes();
  for (int p = 1; p <= p_max; ++p)
    for (int i = 0; i < t; ++i)
      basis(i, p) = std::sin(p * kPi * i / static_cast<double>(n));
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis);

  WaveformParams params;
  params.n_steps = n;
  params.sample_period = seq.schedule.sample_period;
  params.a.resize(p_max + 1, 8);
  for (int c = 0; c < 8; ++c) {
    Eigen::VectorXd y(t);
    for (int i = 0; i < t; ++i)
      y[i] = seq.steps[i][c];
    const Eigen::VectorXd coeff = qr.solve(y);
    params.a.col(c) = coeff;
    const double lo = y.minCoeff(), hi = y.maxCoeff();
    const double range = hi - lo;
    const double rms = std::sqrt((y - basis * coeff).squaredNorm() / t);
    const double scale = range > channel_noise_floor(c)
                             ? range
                             : std::max({1.0, std::abs(lo), std::abs(hi)});
    params.fit_residuals[c] = rms / scale;
  }
  return params;
}

MultipoleSequence params_to_sequence(const WaveformParams &params) {
  const int n = params.n_steps;
  if (n < 1)
    throw ConfigError("params_to_sequence: n_steps must be >= 1");
  MultipoleSequence seq;
  seq.schedule = RotationSchedule::uniform(n, params.sample_period);
  seq.steps.resize(n + 1);
  for (int i = 0; i <= n; ++i) {
    Eigen::Matrix<double, 8, 1> m = params.a.row(0).transpose();
    for (int p = 1; p <= params.p_max(); ++p)
      m += std::sin(p * kPi * i / static_cast<double>(n)) *
           params.a.row(p).transpose();
    seq.steps[i] = MultipoleVector::from_vector(m);
  }
  return seq;
}

namespace {

// Realized multipoles for a commanded multipole sequence (8 x T), holding
// the last column for `settle` extra samples; calibration offset excluded
// (callers add it where it applies).
Eigen::MatrixXd run_chain(const DiscreteStateModel &dm,
                          const Eigen::MatrixXd &pinv,
                          const Eigen::MatrixXd &mmat,
                          const Eigen::Matrix<double, 8, 8> &cal_a,
                          const Eigen::MatrixXd &mset, int settle) {
  const int t = static_cast<int>(mset.cols());
  const int total = t + settle;
  const int ns = static_cast<int>(dm.ad.rows());
  const Eigen::MatrixXd um = pinv * mset;
  const Eigen::MatrixXd out_map = cal_a * mmat;

  Eigen::VectorXd x;
  if (ns > 0) {
    const Eigen::MatrixXd lhs =
        Eigen::MatrixXd::Identity(ns, ns) - dm.ad;
    x = lhs.partialPivLu().solve(dm.bd * um.col(0));
  } else {
    x.resize(0);
  }

  Eigen::MatrixXd out(8, total);
  for (int i = 0; i < total; ++i) {
    const Eigen::VectorXd u = um.col(std::min(i, t - 1));
    out.col(i) = out_map * (dm.c * x + dm.d * u);
    if (ns > 0)
      x = dm.ad * x + dm.bd * u;
  }
  return out;
}

} // namespace

WaveformParams precompensate(const WaveformParams &desired,
                             const LinearStateModel &filter_model,
                             const CalibrationMap &cal,
                             const MultipoleMatrix &mm, int p_max_out,
                             int settle_steps, double clamp) {
  const int k = static_cast<int>(mm.m.cols());
  if (filter_model.inputs() != k || filter_model.outputs() != k)
    throw ConfigError("precompensate: filter and electrode channel counts "
                      "disagree");
  if (p_max_out < desired.p_max())
    throw ConfigError("precompensate: output order below the desired order");
  const int n = desired.n_steps;
  const int t = n + 1;
  const int total = t + settle_steps;

  const MultipoleSequence des_seq = params_to_sequence(desired);
  Eigen::MatrixXd des(8, total);
  for (int i = 0; i < total; ++i)
    des.col(i) = des_seq.steps[std::min(i, t - 1)].to_vector();

  const Eigen::Matrix<double, 8, 1> a0_des = desired.a.row(0).transpose();
  const Eigen::Matrix<double, 8, 1> a0_set =
      cal.a.partialPivLu().solve(a0_des - cal.b);

  const DiscreteStateModel dm =
      discretize(filter_model, desired.sample_period);

  Eigen::MatrixXd base =
      run_chain(dm, mm.pseudo_inverse, mm.m, cal.a,
                a0_set.replicate(1, t), settle_steps);
  base.colwise() += cal.b;

  Eigen::MatrixXd target = des - base;
  const Eigen::Map<const Eigen::VectorXd> tvec(target.data(), 8 * total);

  Eigen::VectorXd sines(t);
  Eigen::MatrixXd cols(8 * total, 8 * p_max_out);
  for (int p = 1; p <= p_max_out; ++p) {
    for (int i = 0; i < t; ++i)
      sines[i] = std::sin(p * kPi * i / static_cast<double>(n));
    for (int c = 0; c < 8; ++c) {
      Eigen::MatrixXd mset = Eigen::MatrixXd::Zero(8, t);
      mset.row(c) = sines.transpose();
      const Eigen::MatrixXd resp = run_chain(dm, mm.pseudo_inverse, mm.m,
                                             cal.a, mset, settle_steps);
      cols.col((p - 1) * 8 + c) =
          Eigen::Map<const Eigen::VectorXd>(resp.data(), 8 * total);
    }
  }

  const Eigen::VectorXd sol = cols.colPivHouseholderQr().solve(tvec);

  WaveformParams out;
  out.n_steps = n;
  out.sample_period = desired.sample_period;
  out.a.resize(p_max_out + 1, 8);
  out.a.row(0) = a0_set.transpose();
  for (int p = 1; p <= p_max_out; ++p)
    out.a.row(p) = sol.segment(8 * (p - 1), 8).transpose();

  const Eigen::VectorXd err = tvec - cols * sol;
  for (int c = 0; c < 8; ++c) {
    double ss = 0;
    double lo = des(c, 0), hi = des(c, 0);
    for (int i = 0; i < total; ++i) {
      ss += err[8 * i + c] * err[8 * i + c];
      lo = std::min(lo, des(c, i));
      hi = std::max(hi, des(c, i));
    }
    const double range = hi - lo;
    const double scale = range > channel_noise_floor(c)
                             ? range
                             : std::max({1.0, std::abs(lo), std::abs(hi)});
    out.fit_residuals[c] = std::sqrt(ss / total) / scale;
  }

  const MultipoleSequence set_seq = params_to_sequence(out);
  double peak = 0;
  for (const auto &m : set_seq.steps)
    peak = std::max(peak,
                    (mm.pseudo_inverse * m.to_vector()).cwiseAbs().maxCoeff());
  if (peak > clamp)
    throw ConfigError("precompensate: compensated voltages reach " +
                      std::to_string(peak) + " V, beyond the " +
                      std::to_string(clamp) + " V clamp");
  return out;
}

} // namespace iontrap
