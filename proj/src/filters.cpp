#include "iontrap/filters.hpp"

#include <cmath>
#include <complex>
#include <unsupported/Eigen/MatrixFunctions>
#include <vector>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"

namespace iontrap {

LinearStateModel LinearStateModel::identity(int channels) {
  LinearStateModel m;
  m.a.resize(0, 0);
  m.b.resize(0, channels);
  m.c.resize(channels, 0);
  m.d = Eigen::MatrixXd::Identity(channels, channels);
  return m;
}

LinearStateModel assemble(const FilterNetwork &net) {
  if (net.channel_count < 1 || net.stage_inductance <= 0 ||
      net.stage_capacitance <= 0 || net.trap_capacitance <= 0 ||
      net.amplifier_resistance <= 0 || net.wire_resistance_per_meter < 0 ||
      net.feed_wire_length < 0 || net.trap_wire_length <= 0 ||
      net.ground_feed_resistance < 0 || net.ground_trap_resistance < 0)
    throw ConfigError("assemble: non-physical filter network values");

  const int k = net.channel_count;
  const int nb = net.duplicate_branch ? 2 : 1;
  const int spc = 4 * nb + 1;
  const int n = spc * k;
  const double l = net.stage_inductance;
  const double c1 = net.stage_capacitance;
  const double c2 = net.stage_capacitance;
  const double ct = net.trap_capacitance;
  const double ramp = net.amplifier_resistance;
  const double rw1 = net.wire_resistance_per_meter * net.feed_wire_length;
  const double rw2 = net.wire_resistance_per_meter * net.trap_wire_length;
  const double rg1 = net.ground_feed_resistance;
  const double rg2 = net.ground_trap_resistance;

  const auto idx = [&](int ch, int br, int w) { return ch * spc + 4 * br + w; };
  const auto idx_ct = [&](int ch) { return ch * spc + 4 * nb; };

  LinearStateModel m;
  m.a = Eigen::MatrixXd::Zero(n, n);
  m.b = Eigen::MatrixXd::Zero(n, k);
  m.c = Eigen::MatrixXd::Zero(k, n);
  m.d = Eigen::MatrixXd::Zero(k, k);

  // Filter-board ground potential: rg1 times the total source-side current.
  Eigen::RowVectorXd vf = Eigen::RowVectorXd::Zero(n);
  for (int ch = 0; ch < k; ++ch)
    for (int br = 0; br < nb; ++br)
      vf(idx(ch, br, 0)) += rg1;

  // Trap-board minus filter-board ground potential, eliminated from KCL on
  // the shared return resistance.
  Eigen::RowVectorXd dt = Eigen::RowVectorXd::Zero(n);
  if (rg2 > 0) {
    const double denom = k * nb + rw2 / rg2;
    for (int ch = 0; ch < k; ++ch) {
      for (int br = 0; br < nb; ++br)
        dt(idx(ch, br, 3)) += 1.0 / denom;
      dt(idx_ct(ch)) -= nb / denom;
    }
  }

  for (int ch = 0; ch < k; ++ch) {
    for (int br = 0; br < nb; ++br) {
      const int i1 = idx(ch, br, 0);
      const int i2 = idx(ch, br, 1);
      const int v1 = idx(ch, br, 2);
      const int v2 = idx(ch, br, 3);

      Eigen::RowVectorXd row = -vf;
      for (int b2 = 0; b2 < nb; ++b2)
        row(idx(ch, b2, 0)) -= ramp;
      row(i1) -= rw1;
      row(v1) -= 1.0;
      m.a.row(i1) = row / l;
      m.b(i1, ch) = 1.0 / l;

      m.a(v1, i1) = 1.0 / c1;
      m.a(v1, i2) = -1.0 / c1;

      m.a(i2, v1) = 1.0 / l;
      m.a(i2, v2) = -1.0 / l;

      Eigen::RowVectorXd jrow = -dt;
      jrow(v2) += 1.0;
      jrow(idx_ct(ch)) -= 1.0;
      jrow /= rw2;
      m.a(v2, i2) = 1.0 / c2;
      m.a.row(v2) -= jrow / c2;
      m.a.row(idx_ct(ch)) += jrow / ct;
    }
    m.c(ch, idx_ct(ch)) = 1.0;
  }
  return m;
}

Eigen::MatrixXcd frequency_response(const LinearStateModel &model, double f) {
  if (f < 0)
    throw ConfigError("frequency_response: negative frequency");
  const int n = model.states();
  if (n == 0)
    return model.d.cast<std::complex<double>>();
  const std::complex<double> s(0.0, 2.0 * kPi * f);
  Eigen::MatrixXcd m =
      s * Eigen::MatrixXcd::Identity(n, n) - model.a.cast<std::complex<double>>();
  return model.c.cast<std::complex<double>>() *
             m.partialPivLu().solve(model.b.cast<std::complex<double>>()) +
         model.d.cast<std::complex<double>>();
}

double group_delay(const LinearStateModel &model, double f) {
  if (f <= 0)
    throw ConfigError("group_delay: frequency must be positive");
  const double f1 = 0.9 * f;
  const double f2 = 1.1 * f;
  const std::complex<double> h1 = frequency_response(model, f1)(0, 0);
  const std::complex<double> h2 = frequency_response(model, f2)(0, 0);
  return -std::arg(h2 / h1) / (2.0 * kPi * (f2 - f1));
}

DiscreteStateModel discretize(const LinearStateModel &model, double dt) {
  if (dt <= 0)
    throw ConfigError("discretize: sample period must be positive");
  const int n = model.states();
  const int k = model.inputs();
  DiscreteStateModel d;
  d.c = model.c;
  d.d = model.d;
  d.sample_period = dt;
  if (n == 0) {
    d.ad.resize(0, 0);
    d.bd.resize(0, k);
    return d;
  }
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + k, n + k);
  aug.topLeftCorner(n, n) = model.a * dt;
  aug.topRightCorner(n, k) = model.b * dt;
  const Eigen::MatrixXd e = aug.exp();
  d.ad = e.topLeftCorner(n, n);
  d.bd = e.topRightCorner(n, k);
  return d;
}

namespace {

Eigen::VectorXd settled_state(const LinearStateModel &model,
                              const Eigen::VectorXd &u) {
  if (model.states() == 0)
    return Eigen::VectorXd();
  return model.a.partialPivLu().solve(-(model.b * u));
}

} // namespace

VoltageSequence apply_filter(const LinearStateModel &model,
                             const VoltageSequence &input, bool steady_start) {
  if (input.channels() != model.inputs())
    throw ConfigError("apply_filter: channel count mismatch");
  const DiscreteStateModel dm = discretize(model, input.sample_period);
  const int t = input.length();
  VoltageSequence out;
  out.sample_period = input.sample_period;
  out.samples.resize(model.outputs(), t);
  if (t == 0)
    return out;
  Eigen::VectorXd x = steady_start
                          ? settled_state(model, input.samples.col(0))
                          : Eigen::VectorXd::Zero(model.states());
  for (int i = 0; i < t; ++i) {
    const Eigen::VectorXd u = input.samples.col(i);
    out.samples.col(i) = dm.c * x + dm.d * u;
    x = dm.ad * x + dm.bd * u;
  }
  return out;
}

namespace {

// Radix-2 FFT, in place; n must be a power of two. sign = -1 forward,
// +1 inverse (unnormalized).
void fft(std::vector<std::complex<double>> &a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1)
      j ^= bit;
    j ^= bit;
    if (i < j)
      std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * kPi /
                       static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n)
    p <<= 1;
  return p;
}

} // namespace

VoltageSequence invert_filter(const LinearStateModel &model,
                              const VoltageSequence &desired,
                              double regularization, double clamp) {
  if (desired.channels() != model.outputs())
    throw ConfigError("invert_filter: channel count mismatch");
  if (regularization <= 0)
    throw ConfigError("invert_filter: regularization must be positive");
  const int k = desired.channels();
  const int t = desired.length();
  const std::size_t n = next_pow2(2 * static_cast<std::size_t>(t) + 2048);
  const DiscreteStateModel dm = discretize(model, desired.sample_period);
  const int ns = model.states();

  // The circular deconvolution sees the sequence as periodic, so the pad
  // region holds the first sample's value; sequences should start and end
  // settled at that level.
  std::vector<std::vector<std::complex<double>>> spec(
      k, std::vector<std::complex<double>>(n));
  for (int c = 0; c < k; ++c) {
    const double pad = t > 0 ? desired.samples(c, 0) : 0.0;
    for (std::size_t i = 0; i < n; ++i)
      spec[c][i] = i < static_cast<std::size_t>(t)
                       ? desired.samples(c, static_cast<int>(i))
                       : pad;
    fft(spec[c], -1);
  }

  const double lam = regularization * regularization;
  const Eigen::MatrixXcd cc = dm.c.cast<std::complex<double>>();
  const Eigen::MatrixXcd bc = dm.bd.cast<std::complex<double>>();
  const Eigen::MatrixXcd dc = dm.d.cast<std::complex<double>>();
  const Eigen::MatrixXcd ac = dm.ad.cast<std::complex<double>>();

  std::vector<std::vector<std::complex<double>>> uspec(
      k, std::vector<std::complex<double>>(n));
  for (std::size_t bin = 0; bin <= n / 2; ++bin) {
    const double ang =
        2.0 * kPi * static_cast<double>(bin) /
        static_cast<double>(n);
    const std::complex<double> z(std::cos(ang), std::sin(ang));
    Eigen::MatrixXcd h;
    if (ns == 0) {
      h = dc;
    } else {
      Eigen::MatrixXcd zi = z * Eigen::MatrixXcd::Identity(ns, ns) - ac;
      h = cc * zi.partialPivLu().solve(bc) + dc;
    }
    Eigen::VectorXcd d(k);
    for (int c = 0; c < k; ++c)
      d(c) = spec[c][bin];
    const Eigen::MatrixXcd hh = h.adjoint() * h +
                                lam * Eigen::MatrixXcd::Identity(k, k);
    const Eigen::VectorXcd u = hh.ldlt().solve(h.adjoint() * d);
    for (int c = 0; c < k; ++c) {
      uspec[c][bin] = u(c);
      if (bin > 0 && bin < n / 2)
        uspec[c][n - bin] = std::conj(u(c));
    }
  }

  VoltageSequence out;
  out.sample_period = desired.sample_period;
  out.samples.resize(k, t);
  for (int c = 0; c < k; ++c) {
    fft(uspec[c], 1);
    for (int i = 0; i < t; ++i)
      out.samples(c, i) = uspec[c][i].real() / static_cast<double>(n);
  }

  const double peak = out.samples.size()
                          ? out.samples.cwiseAbs().maxCoeff()
                          : 0.0;
  if (peak > clamp)
    throw ConfigError("invert_filter: compensated input reaches " +
                      std::to_string(peak) + " V, beyond the " +
                      std::to_string(clamp) + " V clamp");
  return out;
}

DenseOutputModel dense_output(const LinearStateModel &model,
                              const Eigen::MatrixXd &out_map, double dt,
                              int substeps) {
  if (substeps < 1)
    throw ConfigError("dense_output: substeps must be >= 1");
  if (out_map.cols() != model.outputs())
    throw ConfigError("dense_output: output map shape mismatch");
  const int n = model.states();
  const int k = model.inputs();
  const int no = static_cast<int>(out_map.rows());

  DenseOutputModel dom;
  dom.substeps = substeps;
  dom.px.resize(no * substeps, n);
  dom.pu.resize(no * substeps, k);

  Eigen::MatrixXd step = Eigen::MatrixXd::Identity(n + k, n + k);
  if (n > 0) {
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + k, n + k);
    aug.topLeftCorner(n, n) = model.a * (dt / substeps);
    aug.topRightCorner(n, k) = model.b * (dt / substeps);
    step = aug.exp();
  }

  const Eigen::MatrixXd oc = out_map * model.c;
  const Eigen::MatrixXd od = out_map * model.d;
  Eigen::MatrixXd cur = Eigen::MatrixXd::Identity(n + k, n + k);
  for (int j = 0; j < substeps; ++j) {
    dom.px.middleRows(no * j, no) = oc * cur.topLeftCorner(n, n);
    dom.pu.middleRows(no * j, no) = oc * cur.topRightCorner(n, k) + od;
    cur = step * cur;
  }
  dom.step.ad = cur.topLeftCorner(n, n);
  dom.step.bd = cur.topRightCorner(n, k);
  dom.step.c = model.c;
  dom.step.d = model.d;
  dom.step.sample_period = dt;
  return dom;
}

} // namespace iontrap
