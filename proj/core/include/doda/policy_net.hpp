#pragma once

// Two-hidden-layer tanh network with a softmax policy head and a scalar value
// head on a shared trunk. Dropout masks apply to both hidden layers with
// inverted scaling, so a maskless pass is the dropout-free expectation.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "doda/rng.hpp"
#include "doda/types.hpp"

namespace doda::net {

struct LayerSizes {
  int input = 0;
  int hidden1 = 32;
  int hidden2 = 32;

  bool operator==(const LayerSizes&) const = default;
};

struct NetworkParams {
  Eigen::MatrixXd w1;      // hidden1 x input
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;      // hidden2 x hidden1
  Eigen::VectorXd b2;
  Eigen::MatrixXd w_pi;    // kNumActions x hidden2
  Eigen::VectorXd b_pi;
  Eigen::RowVectorXd w_v;  // 1 x hidden2
  double b_v = 0.0;

  /// Zero-filled parameters of the given shape.
  static NetworkParams zeros(const LayerSizes& sizes);

  LayerSizes sizes() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  double squared_norm() const;

  /// All parameters in declaration order (Eigen storage order within a block);
  /// used by the optimizer and the finite-difference checks.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  /// this += scale * other
  void add_scaled(const NetworkParams& other, double scale);
  void scale(double factor);

  bool operator==(const NetworkParams& other) const;
};

/// Keep indicators for both hidden layers; entries are exactly 0 or 1.
struct DropoutMask {
  double p_drop = 0.0;
  std::vector<std::uint8_t> h1;
  std::vector<std::uint8_t> h2;

  double keep_scale() const { return 1.0 / (1.0 - p_drop); }
  bool operator==(const DropoutMask&) const = default;
};

struct ForwardOutput {
  std::array<double, kNumActions> logits{};
  ActionDistribution action_probs;
  double value = 0.0;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
/// Throws ConfigError on a non-positive layer size.
NetworkParams init_params(const LayerSizes& sizes, Rng& rng);

/// Each unit kept independently with probability 1 - p_drop.
/// Throws ConfigError unless 0 <= p_drop < 1.
DropoutMask sample_mask(double p_drop, const LayerSizes& sizes, Rng& rng);

/// Deterministic pass (no dropout).
ForwardOutput forward(const NetworkParams& params, const StateVector& state);
/// Pass with hidden outputs multiplied by mask / (1 - p_drop).
ForwardOutput forward(const NetworkParams& params, const StateVector& state,
                      const DropoutMask& mask);

/// Numerically stable softmax.
ActionDistribution softmax(const std::array<double, kNumActions>& logits);

/// One example of a minibatch: the input and the mask it was evaluated under.
struct NetInput {
  const StateVector* state = nullptr;
  const DropoutMask* mask = nullptr;  // null: maskless pass
};

/// Per-example loss contribution and its gradient with respect to the
/// network outputs.
struct OutputGradient {
  double loss = 0.0;
  std::array<double, kNumActions> d_logits{};
  double d_value = 0.0;
};

using LossHead = std::function<OutputGradient(std::size_t index, const ForwardOutput& out)>;

struct LossAndGradient {
  double loss = 0.0;
  NetworkParams grad;
};

/// Sums the head's loss over the batch and back-propagates it to every
/// parameter. Throws NumericError if the loss or any gradient is not finite.
LossAndGradient backward(const NetworkParams& params, std::span<const NetInput> batch,
                         const LossHead& head);

/// Checkpoint metadata stored alongside the arrays.
struct CheckpointMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  double p_drop = 0.0;
};

/// Text checkpoint (JSON) with one named array per layer. Loading reproduces
/// every parameter bit for bit.
void save_checkpoint(const std::string& path, const NetworkParams& params,
                     const CheckpointMeta& meta);
std::pair<NetworkParams, CheckpointMeta> load_checkpoint(const std::string& path);
std::string checkpoint_to_string(const NetworkParams& params, const CheckpointMeta& meta);
std::pair<NetworkParams, CheckpointMeta> checkpoint_from_string(const std::string& text);

}  // namespace doda::net
