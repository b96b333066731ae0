#pragma once

// Proximal policy optimization with truncated generalized advantage
// estimation, an entropy bonus, a squared-error value loss and an L2 term.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "doda/policy_net.hpp"
#include "doda/rng.hpp"
#include "doda/types.hpp"

namespace doda::ppo {

struct PPOConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.2;
  double c1 = 0.01;  // entropy bonus
  double c2 = 0.5;   // value loss
  int epochs = 10;
  int minibatch_size = 64;
  double learning_rate = 3e-4;
  double weight_decay = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double max_grad_norm = 0.5;  // 0 disables clipping
  bool normalize_advantages = true;

  void validate() const;
};

/// L2 coefficient of the dropout variational objective, (1 - p) / (2N).
double variational_weight_decay(double p_drop, std::size_t num_samples);

struct Transition {
  StateVector state;
  std::optional<net::DropoutMask> mask;  // mask the behaviour pass used
  Action action = Action::kHold;
  double reward = 0.0;
  double value_estimate = 0.0;
  double action_prob_old = 1.0;
  bool done = false;
};

/// Time-ordered transitions of one agent; `done` only on the last one.
struct Trajectory {
  std::vector<Transition> steps;
  double bootstrap_value = 0.0;  // V(s_T) when truncated, 0 when terminal
};

class RolloutBuffer {
 public:
  /// Throws ContractViolation on an empty trajectory or a `done` flag before
  /// the end.
  void add(Trajectory trajectory);
  void merge(RolloutBuffer&& other);

  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  void clear();

 private:
  std::vector<Trajectory> trajectories_;
  std::size_t size_ = 0;
};

/// A_t = sum_k (gamma*lambda)^k delta_{t+k}, delta_t = r_t + gamma V_{t+1} - V_t,
/// with V_T = bootstrap_value.
std::vector<double> compute_gae(std::span<const double> rewards, std::span<const double> values,
                                double bootstrap_value, double gamma, double lambda);

/// One training example with its advantage and value target.
struct Sample {
  const Transition* transition = nullptr;
  double advantage = 0.0;
  double value_target = 0.0;
};

/// Flattens the buffer into samples; value targets are lambda-returns.
std::vector<Sample> build_samples(const RolloutBuffer& buffer, const PPOConfig& config);

/// Shifts/scales advantages to zero mean, unit variance (needs >= 2 samples).
void normalize_advantages(std::span<Sample> samples);

struct ObjectiveDiagnostics {
  double objective = 0.0;
  double surrogate = 0.0;
  double entropy = 0.0;
  double value_loss = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};

/// mean[min(r A, clip(r, 1-eps, 1+eps) A) + c1 H - c2 (V - V_targ)^2] - wd |theta|^2.
/// `gradient` holds d(objective)/d(theta) when requested.
struct ObjectiveResult {
  ObjectiveDiagnostics diagnostics;
  std::optional<net::NetworkParams> gradient;
};

ObjectiveResult ppo_objective(std::span<const Sample> minibatch, const net::NetworkParams& params,
                              const PPOConfig& config, bool with_gradient = true);

/// Clipped surrogate of one sample: min(r A, clip(r, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double clip_eps);

/// Adaptive-moment gradient ascent state.
class Adam {
 public:
  explicit Adam(std::size_t parameter_count = 0);
  /// Takes one ascent step along `gradient` (of the objective).
  void step(net::NetworkParams& params, const net::NetworkParams& gradient,
            const PPOConfig& config);
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t t_ = 0;
};

struct UpdateStats {
  double objective = 0.0;
  double surrogate = 0.0;
  double entropy = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
  int minibatches = 0;
  bool aborted = false;  // numeric failure; parameters left unchanged
};

struct UpdateResult {
  net::NetworkParams params;
  UpdateStats stats;
};

/// `epochs` passes of shuffled minibatch ascent on the clipped objective.
/// Old action probabilities are those recorded in the buffer. On a numeric
/// failure the input parameters are returned with stats.aborted set.
UpdateResult update(const net::NetworkParams& params, const RolloutBuffer& buffer,
                    const PPOConfig& config, Rng& rng, Adam& optimizer);

}  // namespace doda::ppo
