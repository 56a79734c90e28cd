#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "iontrap/errors.hpp"
#include "iontrap/optimizer.hpp"
#include "iontrap/rng.hpp"
#include "iontrap/rotation.hpp"
#include "iontrap/serialize.hpp"

using namespace iontrap;

namespace {

WaveformParams example_params() {
  WaveformParams p;
  p.a.resize(4, 8);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 8; ++c)
      p.a(r, c) = 100.0 * r + c;
  p.n_steps = 80;
  p.sample_period = 2.5e-7;
  return p;
}

} // namespace

TEST_CASE("candidate packing round-trips") {
  const WaveformParams p = example_params();
  const Eigen::VectorXd x = pack_candidate(p);
  REQUIRE(x.size() == 3 * 8 + 1);
  CHECK(x[x.size() - 1] == 80.0);
  CHECK(x[0] == p.a(1, 0));
  CHECK(x[8 + 3] == p.a(2, 3));

  const WaveformParams back = unpack_candidate(x, p);
  CHECK((back.a - p.a).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.n_steps == 80);
  CHECK(back.sample_period == p.sample_period);

  Eigen::VectorXd y = x;
  y[y.size() - 1] = 77.4;
  CHECK(unpack_candidate(y, p).n_steps == 77);
  y[y.size() - 1] = 0.3;
  CHECK(unpack_candidate(y, p).n_steps == 2);
}

TEST_CASE("candidate sampling is reproducible and box-bounded") {
  Eigen::VectorXd center(5), bounds(5);
  center << 1, -2, 0.5, 3, -1;
  bounds << 0.1, 0.0, 2.0, 0.5, 1.0;

  const CandidateBatch a = sample_candidates(center, bounds, 40, 9);
  const CandidateBatch b = sample_candidates(center, bounds, 40, 9);
  const CandidateBatch c = sample_candidates(center, bounds, 40, 10);

  CHECK((a.candidates - b.candidates).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.candidates - c.candidates).cwiseAbs().maxCoeff() > 0.0);
  CHECK(a.candidates.cols() == 40);
  CHECK((a.candidates.col(0) - center).cwiseAbs().maxCoeff() == 0.0);
  for (int k = 0; k < 40; ++k)
    for (int i = 0; i < 5; ++i) {
      CHECK(a.candidates(i, k) <= center[i] + bounds[i] + 1e-12);
      CHECK(a.candidates(i, k) >= center[i] - bounds[i] - 1e-12);
    }
  for (int k = 0; k < 40; ++k)
    CHECK(a.candidates(1, k) == -2.0);
}

TEST_CASE("surrogate learns a smooth bowl") {
  const int dim = 4;
  Eigen::VectorXd center = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd bounds = Eigen::VectorXd::Constant(dim, 1.0);
  CandidateBatch batch = sample_candidates(center, bounds, 300, 3);
  batch.targets.resize(300);
  for (int k = 0; k < 300; ++k) {
    const Eigen::VectorXd &x = batch.candidates.col(k);
    batch.targets[k] = (x - Eigen::VectorXd::Constant(dim, 0.3)).squaredNorm();
  }
  const SurrogateModel model = train_surrogate(batch, 16, 5);
  CHECK_FALSE(model.trivial);
  CHECK(model.heldout_r2 > 0.9);

  std::vector<Eigen::VectorXd> starts;
  for (int k = 0; k < 8; ++k)
    starts.push_back(batch.candidates.col(k));
  const MinimizeResult res = minimize_surrogate(model, starts, center, bounds);
  CHECK((res.x - Eigen::VectorXd::Constant(dim, 0.3)).norm() < 0.25);
  CHECK(res.predicted < 0.2);
}

TEST_CASE("flat targets mark the surrogate trivial") {
  Eigen::VectorXd center = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd bounds = Eigen::VectorXd::Constant(3, 1.0);
  CandidateBatch batch = sample_candidates(center, bounds, 60, 4);
  batch.targets = Eigen::VectorXd::Constant(60, 2.5);
  const SurrogateModel model = train_surrogate(batch, 8, 5);
  CHECK(model.trivial);
}

TEST_CASE("optimization loop drives a quadratic objective down") {
  const int dim = 6;
  Eigen::VectorXd target(dim);
  target << 0.4, -0.2, 0.1, 0.3, -0.5, 0.2;

  auto oracle = [&](const Eigen::VectorXd &x) {
    OracleOutcome o;
    o.delta_n.resize(2);
    o.labels = {"z-com", "z-str"};
    const double f = (x - target).squaredNorm();
    o.delta_n[0] = 0.5 * f;
    o.delta_n[1] = 0.5 * f;
    o.success = true;
    return o;
  };

  Eigen::VectorXd a_init = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd bounds = Eigen::VectorXd::Constant(dim, 1.0);
  LoopConfig cfg;
  cfg.iterations = 3;
  cfg.batch_size = 120;
  cfg.hidden_width = 12;
  cfg.threads = 2;
  cfg.objective_prefix = "z";

  const LoopResult res = optimize_loop(oracle, a_init, bounds, cfg, 17);
  CHECK(res.best_objective < oracle(a_init).delta_n.sum());
  CHECK(res.best_objective < 0.2);
  CHECK(res.iteration_best.size() == 3);
  CHECK(res.history.size() == 3 * 120);
  CHECK(res.history.front().iteration == 0);
  CHECK(res.history.front().index == 0);
  CHECK((res.history.front().x - a_init).cwiseAbs().maxCoeff() == 0.0);

  const LoopResult rerun = optimize_loop(oracle, a_init, bounds, cfg, 17);
  CHECK(rerun.best_objective == res.best_objective);
  CHECK((rerun.best - res.best).cwiseAbs().maxCoeff() == 0.0);
  CHECK(history_csv(rerun.history) == history_csv(res.history));
}

TEST_CASE("objective prefix restricts the counted modes") {
  auto oracle = [&](const Eigen::VectorXd &x) {
    OracleOutcome o;
    o.delta_n.resize(2);
    o.labels = {"z-com", "x-str"};
    o.delta_n[0] = x.squaredNorm();
    o.delta_n[1] = 1000.0;
    return o;
  };
  Eigen::VectorXd a_init = Eigen::VectorXd::Constant(2, 0.5);
  Eigen::VectorXd bounds = Eigen::VectorXd::Constant(2, 0.6);
  LoopConfig cfg;
  cfg.iterations = 2;
  cfg.batch_size = 40;
  cfg.hidden_width = 8;
  cfg.threads = 1;
  cfg.objective_prefix = "z";
  const LoopResult res = optimize_loop(oracle, a_init, bounds, cfg, 3);
  CHECK(res.best_objective < 0.3);
}

TEST_CASE("all-loss batches raise a numerical error") {
  auto oracle = [](const Eigen::VectorXd &) {
    OracleOutcome o;
    o.loss = true;
    return o;
  };
  Eigen::VectorXd a_init = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd bounds = Eigen::VectorXd::Constant(2, 1.0);
  LoopConfig cfg;
  cfg.iterations = 1;
  cfg.batch_size = 10;
  cfg.threads = 1;
  CHECK_THROWS_AS(optimize_loop(oracle, a_init, bounds, cfg, 1),
                  NumericalError);
}
