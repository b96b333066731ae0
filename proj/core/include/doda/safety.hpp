#pragma once

// Execution-time safety module: input perturbation (state safety) and
// Monte-Carlo dropout ensembles (model safety), combined by majority vote or
// by minimum entropy.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "doda/policy_net.hpp"
#include "doda/rng.hpp"
#include "doda/types.hpp"

namespace doda::safety {

enum class Mode { kBaseline, kDropout, kDa1, kDa2, kDa1Dropout, kDa2Dropout };

/// CLI/result-file names: baseline, do, da1, da2, da1do, da2do.
std::string_view to_string(Mode mode);
/// Throws ConfigError on an unknown name.
Mode parse_mode(std::string_view name);
const std::vector<Mode>& all_modes();

bool uses_dropout(Mode mode);
bool uses_augmentation(Mode mode);

/// How a single dropout pass turns into an action.
enum class PassRule {
  kArgmax,       // most probable action of the masked pass
  kCategorical,  // sample from the masked pass's softmax
};

std::string_view to_string(PassRule rule);
PassRule parse_pass_rule(std::string_view name);

struct DodaConfig {
  Mode mode = Mode::kBaseline;
  int m = 5;                 // disturbed states
  int n = 5;                 // dropout passes per state
  double noise_low = -0.1;
  double noise_high = 0.1;
  double p_drop = 0.2;
  PassRule pass_rule = PassRule::kArgmax;

  void validate() const;
};

/// Independent random streams consumed by the selectors. Keeping them apart
/// means a mode only perturbs the streams it actually uses, so runs that
/// differ in mode stay paired on everything else.
struct SelectionStreams {
  Rng noise;   // state perturbations
  Rng mask;    // dropout masks
  Rng policy;  // categorical draws from a network softmax
  Rng select;  // draws from empirical (ensemble) distributions
  Rng vote;    // majority-vote tie breaks

  explicit SelectionStreams(std::uint64_t seed);
};

/// clip(s + eps) with eps_i ~ U(low, high) drawn per component.
StateVector perturb_state(const StateVector& s, double noise_low, double noise_high, Rng& rng);

/// Relative frequencies of the given actions.
ActionDistribution empirical_distribution(std::span<const Action> actions);

/// Index of the largest probability (lowest index on ties).
Action argmax_action(const ActionDistribution& p);

/// n dropout passes with independent masks; returns the frequency of each
/// pass's action.
ActionDistribution mc_action_distribution(const net::NetworkParams& params, const StateVector& s,
                                          int n, double p_drop, PassRule rule,
                                          SelectionStreams& streams);

/// Natural-log entropy, with 0 log 0 = 0.
double entropy(const ActionDistribution& p);

/// Most frequent action; ties broken uniformly at random with `rng`.
/// The random draw only happens when there is a tie.
Action da1_select(std::span<const Action> actions, Rng& rng);

/// Lowest-entropy distribution (lowest index on ties).
std::size_t min_entropy_index(std::span<const ActionDistribution> distributions);

/// Samples an action from the lowest-entropy distribution.
Action da2_select(std::span<const ActionDistribution> distributions, Rng& rng);

/// Full selection pipeline for the configured mode.
Action doda_select(const net::NetworkParams& params, const StateVector& s,
                   const DodaConfig& config, SelectionStreams& streams);

}  // namespace doda::safety
