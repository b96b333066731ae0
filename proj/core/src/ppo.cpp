#include "doda/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doda/errors.hpp"

namespace doda::ppo {

void PPOConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("ppo config: ") + what);
  };
  require(gamma > 0 && gamma <= 1, "gamma must be in (0, 1]");
  require(lambda >= 0 && lambda <= 1, "lambda must be in [0, 1]");
  require(clip_eps > 0, "clip_eps must be positive");
  require(c1 >= 0 && c2 >= 0, "loss coefficients must be nonnegative");
  require(epochs >= 0, "epochs must be nonnegative");
  require(minibatch_size >= 1, "minibatch_size must be at least 1");
  require(learning_rate >= 0, "learning_rate must be nonnegative");
  require(weight_decay >= 0, "weight_decay must be nonnegative");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1,
          "adam betas must be in [0, 1)");
  require(adam_eps > 0, "adam_eps must be positive");
  require(max_grad_norm >= 0, "max_grad_norm must be nonnegative");
}

double variational_weight_decay(double p_drop, std::size_t num_samples) {
  if (num_samples == 0) throw ContractViolation("variational_weight_decay: no samples");
  return (1.0 - p_drop) / (2.0 * static_cast<double>(num_samples));
}

// ---------------------------------------------------------------------------

void RolloutBuffer::add(Trajectory trajectory) {
  if (trajectory.steps.empty()) throw ContractViolation("rollout buffer: empty trajectory");
  for (std::size_t i = 0; i + 1 < trajectory.steps.size(); ++i) {
    if (trajectory.steps[i].done) {
      throw ContractViolation("rollout buffer: done flag before the end of a trajectory");
    }
  }
  for (const auto& t : trajectory.steps) {
    if (!(t.action_prob_old > 0.0 && t.action_prob_old <= 1.0) || !std::isfinite(t.value_estimate)) {
      throw ContractViolation("rollout buffer: invalid transition");
    }
  }
  size_ += trajectory.steps.size();
  trajectories_.push_back(std::move(trajectory));
}

void RolloutBuffer::merge(RolloutBuffer&& other) {
  for (auto& t : other.trajectories_) trajectories_.push_back(std::move(t));
  size_ += other.size_;
  other.clear();
}

void RolloutBuffer::clear() {
  trajectories_.clear();
  size_ = 0;
}

std::vector<double> compute_gae(std::span<const double> rewards, std::span<const double> values,
                                double bootstrap_value, double gamma, double lambda) {
  if (rewards.size() != values.size() || rewards.empty()) {
    throw ContractViolation("compute_gae: rewards and values must have the same nonzero length");
  }
  std::vector<double> adv(rewards.size());
  double running = 0.0;
  double next_value = bootstrap_value;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * running;
    adv[i] = running;
    next_value = values[i];
  }
  return adv;
}

std::vector<Sample> build_samples(const RolloutBuffer& buffer, const PPOConfig& config) {
  std::vector<Sample> samples;
  samples.reserve(buffer.size());
  std::vector<double> rewards, values;
  for (const auto& traj : buffer.trajectories()) {
    rewards.clear();
    values.clear();
    for (const auto& t : traj.steps) {
      rewards.push_back(t.reward);
      values.push_back(t.value_estimate);
    }
    const double bootstrap = traj.steps.back().done ? 0.0 : traj.bootstrap_value;
    const auto adv = compute_gae(rewards, values, bootstrap, config.gamma, config.lambda);
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
      samples.push_back({&traj.steps[i], adv[i], adv[i] + values[i]});
    }
  }
  return samples;
}

void normalize_advantages(std::span<Sample> samples) {
  if (samples.size() < 2) return;
  double mean = 0.0;
  for (const auto& s : samples) mean += s.advantage;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (const auto& s : samples) var += (s.advantage - mean) * (s.advantage - mean);
  var /= static_cast<double>(samples.size());
  const double inv_std = 1.0 / (std::sqrt(var) + 1e-8);
  for (auto& s : samples) s.advantage = (s.advantage - mean) * inv_std;
}

// ---------------------------------------------------------------------------

double clipped_surrogate(double ratio, double advantage, double clip_eps) {
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

ObjectiveResult ppo_objective(std::span<const Sample> minibatch, const net::NetworkParams& params,
                              const PPOConfig& config, bool with_gradient) {
  if (minibatch.empty()) throw ContractViolation("ppo_objective: empty minibatch");
  const double inv_b = 1.0 / static_cast<double>(minibatch.size());
  ObjectiveDiagnostics diag;

  auto head = [&](std::size_t i, const net::ForwardOutput& out) {
    const Sample& s = minibatch[i];
    const Transition& t = *s.transition;
    if (!(t.action_prob_old > 0.0)) throw ContractViolation("ppo_objective: action_prob_old <= 0");
    const std::size_t a = index_of(t.action);
    const auto& p = out.action_probs.probs;
    const double ratio = p[a] / t.action_prob_old;
    const double unclipped = ratio * s.advantage;
    const double clipped =
        std::clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * s.advantage;
    const bool unclipped_active = unclipped <= clipped;
    const double surrogate = unclipped_active ? unclipped : clipped;

    double entropy = 0.0;
    for (double pk : p) {
      if (pk > 0.0) entropy -= pk * std::log(pk);
    }
    const double value_err = out.value - s.value_target;

    diag.surrogate += surrogate * inv_b;
    diag.entropy += entropy * inv_b;
    diag.value_loss += value_err * value_err * inv_b;
    diag.mean_ratio += ratio * inv_b;
    if (std::abs(ratio - 1.0) > config.clip_eps) diag.clip_fraction += inv_b;

    net::OutputGradient g;
    g.loss = (surrogate + config.c1 * entropy - config.c2 * value_err * value_err) * inv_b;
    const double d_ratio = unclipped_active ? s.advantage : 0.0;
    for (std::size_t k = 0; k < kNumActions; ++k) {
      const double indicator = k == a ? 1.0 : 0.0;
      const double d_surrogate = d_ratio * ratio * (indicator - p[k]);
      const double d_entropy = p[k] > 0.0 ? -p[k] * (std::log(p[k]) + entropy) : 0.0;
      g.d_logits[k] = (d_surrogate + config.c1 * d_entropy) * inv_b;
    }
    g.d_value = -2.0 * config.c2 * value_err * inv_b;
    return g;
  };

  std::vector<net::NetInput> inputs;
  inputs.reserve(minibatch.size());
  for (const auto& s : minibatch) {
    inputs.push_back({&s.transition->state, s.transition->mask ? &*s.transition->mask : nullptr});
  }

  ObjectiveResult result;
  double sum;
  if (with_gradient) {
    auto lg = net::backward(params, inputs, head);
    sum = lg.loss;
    if (config.weight_decay > 0.0) {
      // d/dtheta of -wd |theta|^2
      lg.grad.add_scaled(params, -2.0 * config.weight_decay);
    }
    result.gradient = std::move(lg.grad);
  } else {
    sum = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto out = inputs[i].mask ? net::forward(params, *inputs[i].state, *inputs[i].mask)
                                      : net::forward(params, *inputs[i].state);
      sum += head(i, out).loss;
    }
  }
  diag.objective = sum - config.weight_decay * params.squared_norm();
  if (!std::isfinite(diag.objective)) throw NumericError("ppo_objective: non-finite objective");
  result.diagnostics = diag;
  return result;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::size_t parameter_count) : m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

void Adam::step(net::NetworkParams& params, const net::NetworkParams& gradient,
                const PPOConfig& config) {
  std::vector<double> theta = params.flatten();
  const std::vector<double> g = gradient.flatten();
  if (m_.size() != theta.size()) {
    m_.assign(theta.size(), 0.0);
    v_.assign(theta.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * g[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * g[i] * g[i];
    const double m_hat = m_[i] / bias1;
    const double v_hat = v_[i] / bias2;
    theta[i] += config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
  }
  params.assign(theta);
}

UpdateResult update(const net::NetworkParams& params, const RolloutBuffer& buffer,
                    const PPOConfig& config, Rng& rng, Adam& optimizer) {
  if (buffer.empty()) throw ContractViolation("update: empty rollout buffer");
  config.validate();

  UpdateResult result{params, {}};
  const Adam saved_optimizer = optimizer;
  auto abort = [&] {
    optimizer = saved_optimizer;
    result.params = params;
    result.stats = UpdateStats{};
    result.stats.aborted = true;
    return result;
  };

  std::vector<Sample> samples = build_samples(buffer, config);
  for (const auto& s : samples) {
    if (!std::isfinite(s.advantage) || !std::isfinite(s.value_target)) return abort();
  }
  if (config.normalize_advantages) normalize_advantages(samples);

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Sample> minibatch;
  auto& stats = result.stats;
  const auto mb = static_cast<std::size_t>(config.minibatch_size);

  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
      }
      for (std::size_t start = 0; start < order.size(); start += mb) {
        const std::size_t end = std::min(order.size(), start + mb);
        minibatch.clear();
        for (std::size_t k = start; k < end; ++k) minibatch.push_back(samples[order[k]]);

        auto obj = ppo_objective(minibatch, result.params, config, true);
        auto& grad = *obj.gradient;
        if (config.max_grad_norm > 0.0) {
          const double norm = std::sqrt(grad.squared_norm());
          if (norm > config.max_grad_norm) grad.scale(config.max_grad_norm / norm);
        }
        optimizer.step(result.params, grad, config);
        if (!result.params.all_finite()) return abort();

        const auto& d = obj.diagnostics;
        stats.objective += d.objective;
        stats.surrogate += d.surrogate;
        stats.entropy += d.entropy;
        stats.value_loss += d.value_loss;
        stats.clip_fraction += d.clip_fraction;
        stats.mean_ratio += d.mean_ratio;
        ++stats.minibatches;
      }
    }
  } catch (const NumericError&) {
    return abort();
  }

  if (stats.minibatches > 0) {
    const double inv = 1.0 / stats.minibatches;
    stats.objective *= inv;
    stats.surrogate *= inv;
    stats.entropy *= inv;
    stats.value_loss *= inv;
    stats.clip_fraction *= inv;
    stats.mean_ratio *= inv;
  }
  return result;
}

}  // namespace doda::ppo
