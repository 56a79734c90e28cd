#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/filters.hpp"
#include "iontrap/rng.hpp"

using namespace iontrap;

namespace {

FilterNetwork small_network() {
  FilterNetwork net;
  net.channel_count = 3;
  return net;
}

double gain_db(const LinearStateModel &model, double f) {
  return 20 * std::log10(std::abs(frequency_response(model, f)(0, 0)));
}

} // namespace

TEST_CASE("frequency response matches the pinned attenuation profile") {
  const LinearStateModel model = assemble(FilterNetwork{});
  CHECK(gain_db(model, 20e3) == doctest::Approx(-0.821995).epsilon(1e-3));
  CHECK(gain_db(model, 40e3) == doctest::Approx(-2.130377).epsilon(1e-3));
  CHECK(gain_db(model, 1e6) == doctest::Approx(-43.012652).epsilon(1e-3));
  CHECK(gain_db(model, 3e6) == doctest::Approx(-81.961239).epsilon(1e-3));
  CHECK(std::abs(gain_db(model, 10.0)) < 1e-5);
}

TEST_CASE("both-connection network matches its pinned profile") {
  FilterNetwork net;
  net.duplicate_branch = true;
  const LinearStateModel model = assemble(net);
  CHECK(gain_db(model, 20e3) == doctest::Approx(-1.6842).epsilon(1e-3));
  CHECK(gain_db(model, 1e6) == doctest::Approx(-43.8270).epsilon(1e-3));
  CHECK(gain_db(model, 3e6) == doctest::Approx(-80.0777).epsilon(1e-3));
}

TEST_CASE("cutoff of the default chain sits near 47 kHz") {
  const LinearStateModel model = assemble(FilterNetwork{});
  CHECK(gain_db(model, 51.68e3) == doctest::Approx(-3.0).epsilon(0.01));
  CHECK(gain_db(model, 31.03e3) == doctest::Approx(-1.5).epsilon(0.01));
  CHECK(gain_db(model, 38.20e3) == doctest::Approx(-2.0).epsilon(0.01));
}

TEST_CASE("group delay near dc sits around 3.5 microseconds") {
  const LinearStateModel model = assemble(FilterNetwork{});
  const auto h1 = frequency_response(model, 4e3)(0, 0);
  const auto h2 = frequency_response(model, 6e3)(0, 0);
  const double delay = -(std::arg(h2) - std::arg(h1)) / (2 * kPi * 2e3);
  CHECK(delay == doctest::Approx(3.5316e-6).epsilon(0.01));
}

TEST_CASE("state-space response matches a runge-kutta oracle") {
  const LinearStateModel model = assemble(small_network());
  const int ns = model.states();

  VoltageSequence input;
  input.sample_period = 2e-7;
  input.samples.resize(3, 400);
  Rng rng(5);
  for (int t = 0; t < 400; ++t) {
    input.samples(0, t) = std::sin(2 * kPi * t / 150.0);
    input.samples(1, t) = 0.5 * std::cos(2 * kPi * t / 90.0);
    input.samples(2, t) = t < 200 ? 1.0 : 0.0;
  }

  const VoltageSequence out = apply_filter(model, input, false);
  REQUIRE(out.samples.cols() == 400);

  // Classic RK4 on dx/dt = a x + b u with zero-order-held u, 64 substeps
  // per sample.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(ns);
  Eigen::MatrixXd oracle(3, 400);
  const int sub = 64;
  const double h = input.sample_period / sub;
  for (int t = 0; t < 400; ++t) {
    const Eigen::VectorXd u = input.samples.col(t);
    oracle.col(t) = model.c * x + model.d * u;
    for (int s = 0; s < sub; ++s) {
      const Eigen::VectorXd k1 = model.a * x + model.b * u;
      const Eigen::VectorXd k2 = model.a * (x + 0.5 * h * k1) + model.b * u;
      const Eigen::VectorXd k3 = model.a * (x + 0.5 * h * k2) + model.b * u;
      const Eigen::VectorXd k4 = model.a * (x + h * k3) + model.b * u;
      x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
  }
  const double scale = oracle.cwiseAbs().maxCoeff();
  CHECK((out.samples - oracle).cwiseAbs().maxCoeff() < 1e-6 * scale);
}

TEST_CASE("steady start holds a constant input exactly") {
  const LinearStateModel model = assemble(small_network());
  VoltageSequence input;
  input.sample_period = 5e-7;
  input.samples = Eigen::MatrixXd::Constant(3, 50, 0.7);
  input.samples.row(1).setConstant(-0.2);
  const VoltageSequence out = apply_filter(model, input, true);
  for (int t = 0; t < 50; ++t) {
    CHECK(out.samples(0, t) == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(out.samples(1, t) == doctest::Approx(-0.2).epsilon(1e-9));
    CHECK(out.samples(2, t) == doctest::Approx(0.7).epsilon(1e-9));
  }
}

TEST_CASE("crosstalk stays below a few percent of the driven channel") {
  const LinearStateModel model = assemble(FilterNetwork{});
  VoltageSequence input;
  input.sample_period = 5e-8;
  const int len = 1201;
  input.samples = Eigen::MatrixXd::Zero(21, len);
  for (int t = 0; t < len; ++t) {
    const double tt = t * input.sample_period;
    if (tt < 25e-6)
      input.samples(0, t) = std::pow(std::sin(kPi * tt / 25e-6), 2);
  }
  const VoltageSequence out = apply_filter(model, input, true);
  const double driven = out.samples.row(0).cwiseAbs().maxCoeff();
  double cross = 0;
  for (int r = 1; r < 21; ++r)
    cross = std::max(cross, out.samples.row(r).cwiseAbs().maxCoeff());
  CHECK(driven > 0.5);
  CHECK(cross / driven > 0.001);
  CHECK(cross / driven < 0.05);
}

TEST_CASE("filter inversion round-trips a settled waveform") {
  // The deconvolution treats the sequence as periodic, so it must begin and
  // end settled; give the wiggle a long flat lead-in and tail.
  const LinearStateModel model = assemble(small_network());
  VoltageSequence desired;
  desired.sample_period = 2.5e-7;
  const int len = 400;
  desired.samples.resize(3, len);
  for (int t = 0; t < len; ++t) {
    double bump = 0.0;
    if (t >= 160 && t < 360) {
      const double phase = 2 * kPi * (t - 160) / 200.0;
      bump = 0.5 * (1.0 - std::cos(phase));
    }
    desired.samples(0, t) = bump;
    desired.samples(1, t) = 0.1 + 0.2 * bump;
    desired.samples(2, t) = 0.25;
  }
  const VoltageSequence pre = invert_filter(model, desired);
  const VoltageSequence realized = apply_filter(model, pre, true);
  double worst = 0;
  for (int r = 0; r < 3; ++r) {
    const double rms = std::sqrt(
        (realized.samples.row(r) - desired.samples.row(r)).squaredNorm() /
        len);
    const double range = desired.samples.row(r).maxCoeff() -
                         desired.samples.row(r).minCoeff();
    if (range > 1e-9)
      worst = std::max(worst, rms / range);
  }
  CHECK(worst < 0.02);
}

TEST_CASE("inversion rejects waveforms that need excessive drive") {
  const LinearStateModel model = assemble(small_network());
  VoltageSequence desired;
  desired.sample_period = 1e-7;
  const int len = 128;
  desired.samples.resize(3, len);
  for (int t = 0; t < len; ++t)
    desired.samples.col(t).setConstant(9.0 * ((t / 4) % 2 ? 1 : -1));
  CHECK_THROWS_AS(invert_filter(model, desired, 1e-4, 10.0), ConfigError);
}

TEST_CASE("dense output interpolates the full-step discretization") {
  const LinearStateModel model = assemble(small_network());
  const double dt = 5e-7;
  const int sub = 4;
  const Eigen::MatrixXd out_map = Eigen::MatrixXd::Identity(3, 3);
  const DenseOutputModel dom = dense_output(model, out_map, dt, sub);
  REQUIRE(dom.substeps == sub);
  REQUIRE(dom.px.rows() == 3 * sub);

  const DiscreteStateModel fine = discretize(model, dt / sub);
  Rng rng(6);
  Eigen::VectorXd x(model.states());
  for (int i = 0; i < x.size(); ++i)
    x[i] = rng.uniform(-1, 1);
  Eigen::VectorXd u(3);
  for (int i = 0; i < 3; ++i)
    u[i] = rng.uniform(-1, 1);

  Eigen::VectorXd xs = x;
  for (int s = 0; s < sub; ++s) {
    const Eigen::VectorXd y_dense =
        dom.px.middleRows(3 * s, 3) * x + dom.pu.middleRows(3 * s, 3) * u;
    const Eigen::VectorXd y_fine = out_map * (fine.c * xs + fine.d * u);
    CHECK((y_dense - y_fine).cwiseAbs().maxCoeff() < 1e-9);
    xs = fine.ad * xs + fine.bd * u;
  }
  const Eigen::VectorXd x_full = dom.step.ad * x + dom.step.bd * u;
  CHECK((x_full - xs).cwiseAbs().maxCoeff() < 1e-9 * xs.norm());
}
