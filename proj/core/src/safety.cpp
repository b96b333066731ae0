#include "doda/safety.hpp"

#include <algorithm>
#include <cmath>

#include "doda/errors.hpp"

namespace doda::safety {

namespace {

constexpr std::pair<Mode, std::string_view> kModeNames[] = {
    {Mode::kBaseline, "baseline"}, {Mode::kDropout, "do"},       {Mode::kDa1, "da1"},
    {Mode::kDa2, "da2"},           {Mode::kDa1Dropout, "da1do"}, {Mode::kDa2Dropout, "da2do"},
};

Action sample(const ActionDistribution& p, Rng& rng) {
  return action_from_index(rng.categorical(p.probs));
}

}  // namespace

std::string_view to_string(Mode mode) {
  for (const auto& [m, name] : kModeNames) {
    if (m == mode) return name;
  }
  throw ConfigError("invalid mode");
}

Mode parse_mode(std::string_view name) {
  for (const auto& [m, n] : kModeNames) {
    if (n == name) return m;
  }
  throw ConfigError("unknown mode '" + std::string(name) +
                    "' (expected baseline, do, da1, da2, da1do, da2do)");
}

const std::vector<Mode>& all_modes() {
  static const std::vector<Mode> modes = {Mode::kBaseline, Mode::kDa1,        Mode::kDa2,
                                          Mode::kDropout,  Mode::kDa1Dropout, Mode::kDa2Dropout};
  return modes;
}

bool uses_dropout(Mode mode) {
  return mode == Mode::kDropout || mode == Mode::kDa1Dropout || mode == Mode::kDa2Dropout;
}

bool uses_augmentation(Mode mode) {
  return mode == Mode::kDa1 || mode == Mode::kDa2 || mode == Mode::kDa1Dropout ||
         mode == Mode::kDa2Dropout;
}

std::string_view to_string(PassRule rule) {
  return rule == PassRule::kArgmax ? "argmax" : "categorical";
}

PassRule parse_pass_rule(std::string_view name) {
  if (name == "argmax") return PassRule::kArgmax;
  if (name == "categorical") return PassRule::kCategorical;
  throw ConfigError("unknown pass rule '" + std::string(name) + "'");
}

void DodaConfig::validate() const {
  if (m < 1 || n < 1) throw ConfigError("doda config: m and n must be at least 1");
  if (!(noise_low <= noise_high)) throw ConfigError("doda config: noise_low > noise_high");
  if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("doda config: p_drop must be in [0, 1)");
  to_string(mode);
}

SelectionStreams::SelectionStreams(std::uint64_t seed)
    : noise(derive_seed(seed, "noise")),
      mask(derive_seed(seed, "mask")),
      policy(derive_seed(seed, "policy")),
      select(derive_seed(seed, "select")),
      vote(derive_seed(seed, "vote")) {}

StateVector perturb_state(const StateVector& s, double noise_low, double noise_high, Rng& rng) {
  StateVector out = s;
  for (auto& v : out.values) v = std::clamp(v + rng.uniform(noise_low, noise_high), 0.0, 1.0);
  return out;
}

ActionDistribution empirical_distribution(std::span<const Action> actions) {
  if (actions.empty()) throw ContractViolation("empirical_distribution: no actions");
  ActionDistribution d;
  for (Action a : actions) d.probs[index_of(a)] += 1.0;
  for (auto& p : d.probs) p /= static_cast<double>(actions.size());
  return d;
}

Action argmax_action(const ActionDistribution& p) {
  return action_from_index(static_cast<std::size_t>(
      std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin()));
}

ActionDistribution mc_action_distribution(const net::NetworkParams& params, const StateVector& s,
                                          int n, double p_drop, PassRule rule,
                                          SelectionStreams& streams) {
  if (n < 1) throw ContractViolation("mc_action_distribution: n must be at least 1");
  const auto sizes = params.sizes();
  std::array<int, kNumActions> counts{};
  for (int i = 0; i < n; ++i) {
    const auto mask = net::sample_mask(p_drop, sizes, streams.mask);
    const auto out = net::forward(params, s, mask);
    const Action a = rule == PassRule::kArgmax ? argmax_action(out.action_probs)
                                               : sample(out.action_probs, streams.policy);
    ++counts[index_of(a)];
  }
  ActionDistribution d;
  for (std::size_t k = 0; k < kNumActions; ++k) d.probs[k] = counts[k] / static_cast<double>(n);
  return d;
}

double entropy(const ActionDistribution& p) {
  double h = 0.0;
  for (double pk : p.probs) {
    if (pk > 0.0) h -= pk * std::log(pk);
  }
  return h;
}

Action da1_select(std::span<const Action> actions, Rng& rng) {
  if (actions.empty()) throw ContractViolation("da1_select: no actions");
  std::array<int, kNumActions> counts{};
  for (Action a : actions) ++counts[index_of(a)];
  const int best = *std::max_element(counts.begin(), counts.end());
  std::array<std::size_t, kNumActions> tied{};
  std::size_t num_tied = 0;
  for (std::size_t k = 0; k < kNumActions; ++k) {
    if (counts[k] == best) tied[num_tied++] = k;
  }
  if (num_tied == 1) return action_from_index(tied[0]);
  return action_from_index(tied[rng.uniform_index(num_tied)]);
}

std::size_t min_entropy_index(std::span<const ActionDistribution> distributions) {
  if (distributions.empty()) throw ContractViolation("min_entropy_index: no distributions");
  std::size_t best = 0;
  double best_h = entropy(distributions[0]);
  for (std::size_t i = 1; i < distributions.size(); ++i) {
    const double h = entropy(distributions[i]);
    if (h < best_h) {
      best_h = h;
      best = i;
    }
  }
  return best;
}

Action da2_select(std::span<const ActionDistribution> distributions, Rng& rng) {
  return sample(distributions[min_entropy_index(distributions)], rng);
}

Action doda_select(const net::NetworkParams& params, const StateVector& s,
                   const DodaConfig& config, SelectionStreams& streams) {
  const auto perturbed = [&] {
    return perturb_state(s, config.noise_low, config.noise_high, streams.noise);
  };
  const auto mc = [&](const StateVector& x) {
    return mc_action_distribution(params, x, config.n, config.p_drop, config.pass_rule, streams);
  };
  const auto m = static_cast<std::size_t>(config.m);

  switch (config.mode) {
    case Mode::kBaseline:
      return sample(net::forward(params, s).action_probs, streams.policy);

    case Mode::kDropout:
      return sample(mc(s), streams.select);

    case Mode::kDa1: {
      std::vector<Action> actions;
      actions.reserve(m);
      for (std::size_t j = 0; j < m; ++j) {
        actions.push_back(sample(net::forward(params, perturbed()).action_probs, streams.policy));
      }
      return da1_select(actions, streams.vote);
    }

    case Mode::kDa2: {
      std::vector<ActionDistribution> dists;
      dists.reserve(m);
      for (std::size_t j = 0; j < m; ++j) {
        dists.push_back(net::forward(params, perturbed()).action_probs);
      }
      return da2_select(dists, streams.policy);
    }

    case Mode::kDa1Dropout: {
      std::vector<Action> actions;
      actions.reserve(m);
      for (std::size_t j = 0; j < m; ++j) actions.push_back(sample(mc(perturbed()), streams.select));
      return da1_select(actions, streams.vote);
    }

    case Mode::kDa2Dropout: {
      std::vector<ActionDistribution> dists;
      dists.reserve(m);
      for (std::size_t j = 0; j < m; ++j) dists.push_back(mc(perturbed()));
      return da2_select(dists, streams.select);
    }
  }
  throw ConfigError("doda_select: invalid mode");
}

}  // namespace doda::safety
