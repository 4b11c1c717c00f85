#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cacc/random.hpp"

namespace cacc::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NetShape {
  std::size_t obs_dim = 15;
  std::size_t hidden = 64;
  std::size_t actions = 4;

  bool operator==(const NetShape&) const = default;
};

struct LayerParams {
  Matrix weights;  // fan_out x fan_in
  Vector biases;   // fan_out
};

/// Gate blocks are stacked in the order input, forget, cell, output.
struct LstmParams {
  Matrix input_weights;      // 4H x H
  Matrix recurrent_weights;  // 4H x H
  Vector biases;             // 4H
};

/// Parameters of one agent's actor-critic:
///   x  = tanh(W_in obs + b_in)
///   h' = LSTM(x, h, c)
///   pi = softmax(W_a h' + b_a),  V = W_c h' + b_c
///
/// Flattening order (used by checkpoints and consensus): input_fc.weights,
/// input_fc.biases, lstm.input_weights, lstm.recurrent_weights,
/// lstm.biases, actor_head.weights, actor_head.biases, critic_head.weights,
/// critic_head.biases. Matrices are flattened row-major.
struct NetParams {
  NetShape shape;
  LayerParams input_fc;
  LstmParams lstm;
  LayerParams actor_head;
  LayerParams critic_head;

  static NetParams zeros(const NetShape& shape);

  /// Orthogonal weights (gain 1 for hidden layers, `head_gain` for the
  /// actor/critic heads) and zero biases.
  static NetParams orthogonal(const NetShape& shape, Rng& rng, double head_gain = 0.01);

  std::size_t num_params() const;
  std::vector<double> flatten() const;
  /// Throws UsageError if `flat` does not have num_params() entries.
  void unflatten(std::span<const double> flat);

  void add_scaled(const NetParams& other, double scale);
  void scale(double factor);
  double squared_norm() const;
  bool all_finite() const;
};

/// Gradients share the parameter layout.
using GradBundle = NetParams;

struct HiddenState {
  Vector cell;
  Vector hidden;

  static HiddenState zeros(std::size_t size);
};

/// Everything the backward pass needs from one forward step.
struct ForwardRecord {
  Vector obs;
  Vector fc_out;
  HiddenState prev;
  Vector gates;  // post-activation, 4H
  HiddenState next;
  Vector logits;
  Vector policy;
  double value = 0.0;
};

/// Upstream gradients of the loss w.r.t. the step's logits and value.
struct OutputGrad {
  Vector d_logits;
  double d_value = 0.0;
};

/// An agent's network together with its recurrent carry.
struct AgentNet {
  NetParams params;
  HiddenState hidden;

  explicit AgentNet(NetParams p);
  void reset_hidden();
  /// Runs one step and advances `hidden`.
  ForwardRecord step(std::span<const double> obs);
};

/// Q with Q^T Q = gain^2 I on the smaller dimension; deterministic in `rng`.
Matrix orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng);

Vector softmax(const Vector& logits);

/// One forward step from an explicit hidden carry. Throws UsageError on an
/// observation of the wrong length and NumericError on non-finite output.
ForwardRecord forward(const NetParams& net, std::span<const double> obs, const HiddenState& hidden);

/// Reverse-mode gradients through the heads, the LSTM over time and the
/// input layer. Records must come from consecutive forward calls.
GradBundle backward(const NetParams& net, std::span<const ForwardRecord> records,
                    std::span<const OutputGrad> grads);

/// Text checkpoint: one header line with the shape, then one value per line
/// in flattening order, printed with 17 significant digits.
void save_checkpoint(const NetParams& net, const std::filesystem::path& path);
NetParams load_checkpoint(const std::filesystem::path& path);

}  // namespace cacc::nn
