#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iontrap/rotation.hpp"

namespace iontrap {

// Free waveform parameters as a flat search vector: the sine coefficients
// a_p (p >= 1, row-major over the eight channels) followed by the step
// count. The constant row a_0 is never searched.
Eigen::VectorXd pack_candidate(const WaveformParams &params);

// Rebuilds waveform parameters from a search vector, taking a_0 and the
// sample period from `reference`; the step count is rounded and kept >= 2.
WaveformParams unpack_candidate(const Eigen::VectorXd &x,
                                const WaveformParams &reference);

// What the heating oracle reports for one candidate.
struct OracleOutcome {
  Eigen::VectorXd delta_n;
  std::vector<std::string> labels;
  bool success = true;
  bool loss = false;
};

using Oracle = std::function<OracleOutcome(const Eigen::VectorXd &)>;

struct CandidateBatch {
  Eigen::VectorXd center;
  Eigen::VectorXd bounds;     // absolute half-widths; 0 freezes a parameter
  Eigen::MatrixXd candidates; // dim x K, column 0 is the center
  Eigen::VectorXd targets;    // objective per candidate, after evaluation
  std::vector<OracleOutcome> outcomes;
};

// K candidates uniform in the box center +- bounds, column 0 the center
// itself; reproducible by seed.
CandidateBatch sample_candidates(const Eigen::VectorXd &center,
                                 const Eigen::VectorXd &bounds, int k,
                                 std::uint64_t seed);

// Single-hidden-layer tanh network y = w2 . tanh(w1 xn + b1) + b2 on
// normalized inputs and targets.
struct SurrogateModel {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1, w2;
  double b2 = 0;
  Eigen::VectorXd in_mean, in_std;
  double out_mean = 0, out_std = 1;
  bool trivial = false;  // targets carried no signal
  double heldout_r2 = 0; // R^2 on the 20% validation split

  double predict(const Eigen::VectorXd &x) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd &x) const;
};

// Levenberg-Marquardt fit of the network to batch targets, 80/20
// train/validation split with early stopping, best of three weight seeds.
SurrogateModel train_surrogate(const CandidateBatch &batch, int width,
                               std::uint64_t seed);

struct MinimizeResult {
  Eigen::VectorXd x;
  double predicted = 0;
  bool consensus = false; // all starts ended within 1% of the box diagonal
  bool flat = false;      // gradient vanished at every start
};

// Projected gradient descent inside the box from each start; returns the
// lowest predicted value.
MinimizeResult minimize_surrogate(const SurrogateModel &model,
                                  const std::vector<Eigen::VectorXd> &starts,
                                  const Eigen::VectorXd &center,
                                  const Eigen::VectorXd &bounds);

struct LoopConfig {
  int iterations = 4;
  int batch_size = 500;
  double elite_fraction = 0.1;
  int hidden_width = 20;
  double bound_shrink = 0.7;  // applied per iteration after the first
  std::string objective_prefix; // sum Delta-n of labels starting with this
  int threads = 0;              // 0 = hardware concurrency
};

struct CandidateRecord {
  int iteration = 0;
  int index = 0;
  Eigen::VectorXd x;
  Eigen::VectorXd delta_n;
  std::vector<std::string> labels;
  bool success = false;
  bool loss = false;
  double objective = 0;
};

struct LoopResult {
  Eigen::VectorXd best;
  double best_objective = 0;
  std::vector<CandidateRecord> history;
  std::vector<double> iteration_best;
  std::vector<double> iteration_median;
  std::vector<double> surrogate_r2;
};

// Sample - evaluate - fit surrogate - minimize - recenter, for
// cfg.iterations rounds; returns the best candidate of the final batch.
// Bit-identical reruns for a fixed (oracle, seed, cfg). Throws
// NumericalError when every candidate of a batch loses ions.
LoopResult optimize_loop(const Oracle &oracle, const Eigen::VectorXd &a_init,
                         const Eigen::VectorXd &bounds, const LoopConfig &cfg,
                         std::uint64_t seed);

} // namespace iontrap
