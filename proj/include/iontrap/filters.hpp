#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace iontrap {

// Per-channel drive chain: amplifier output resistance, signal wire, then
// one or two identical two-stage LC branches on the filter board, a short
// wire to the electrode, and the near-trap capacitor. Filter-board and
// trap-board grounds return through shared resistances, which couples the
// channels.
struct FilterNetwork {
  int channel_count = 21;
  double stage_inductance = 4.7e-6;         // H, each of the two stages
  double stage_capacitance = 47e-9;         // F, each of the two stages
  double trap_capacitance = 8.0 * 4.7e-9;   // F, per electrode
  double amplifier_resistance = 20.0;       // ohm
  double wire_resistance_per_meter = 4.0;   // ohm/m
  double feed_wire_length = 1.0;            // m, amplifier to filter board
  double trap_wire_length = 0.25;           // m, filter board to electrode
  double ground_feed_resistance = 4.0;      // ohm, common return to 0
  double ground_trap_resistance = 4.0;      // ohm, filter to trap ground
  // The second in-vacuum connection per electrode; modeled when true, but
  // the nominal 47 kHz drive chain is the single connection.
  bool duplicate_branch = false;
};

// dx/dt = a x + b u, y = c x + d u. Inputs are AWG voltages, outputs the
// electrode voltages relative to trap ground.
struct LinearStateModel {
  Eigen::MatrixXd a, b, c, d;

  int states() const { return static_cast<int>(a.rows()); }
  int inputs() const { return static_cast<int>(b.cols()); }
  int outputs() const { return static_cast<int>(c.rows()); }

  static LinearStateModel identity(int channels);
};

LinearStateModel assemble(const FilterNetwork &network);

// K x K complex gain at frequency f (Hz); diagonal is the direct transfer,
// off-diagonal the ground-coupling crosstalk.
Eigen::MatrixXcd frequency_response(const LinearStateModel &model, double f);

// Direct-transfer group delay in seconds, from the phase slope around f.
double group_delay(const LinearStateModel &model, double f);

struct VoltageSequence {
  Eigen::MatrixXd samples; // channels x samples, V
  double sample_period = 5e-7;

  int channels() const { return static_cast<int>(samples.rows()); }
  int length() const { return static_cast<int>(samples.cols()); }
  double duration() const { return sample_period * length(); }
};

// Zero-order-hold discretization: x[k+1] = ad x[k] + bd u[k].
struct DiscreteStateModel {
  Eigen::MatrixXd ad, bd, c, d;
  double sample_period = 0;
};

DiscreteStateModel discretize(const LinearStateModel &model, double dt);

// Propagates the sequence sample by sample; y[k] = c x[k] + d u[k]. With
// steady_start the state begins settled at the first sample's value,
// otherwise at zero.
VoltageSequence apply_filter(const LinearStateModel &model,
                             const VoltageSequence &input,
                             bool steady_start = true);

// Input sequence whose filtered output reproduces `desired`, computed by
// regularized spectral division of the discretized transfer matrix. The
// regularization parameter bounds the worst-case boost at 1/(2 reg).
// Throws ConfigError when the compensated input exceeds the clamp.
VoltageSequence invert_filter(const LinearStateModel &model,
                              const VoltageSequence &desired,
                              double regularization = 1e-3,
                              double clamp = 40.0);

// Dense-output propagator for running a fine-step integrator against a
// coarsely sampled drive: rows j*out+i of px (pu) give output i at the
// j-th substep of one hold interval as a linear map of the interval's
// starting state (held input). `out_map` left-multiplies the model output.
struct DenseOutputModel {
  Eigen::MatrixXd px; // (substeps * out) x states
  Eigen::MatrixXd pu; // (substeps * out) x inputs
  DiscreteStateModel step;
  int substeps = 1;
};

DenseOutputModel dense_output(const LinearStateModel &model,
                              const Eigen::MatrixXd &out_map, double dt,
                              int substeps);

} // namespace iontrap
