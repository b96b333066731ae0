#pragma once

// Experiment orchestration: configuration, PPO training on the training case,
// paired-seed evaluation of the safety modes, and result files.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "doda/policy_net.hpp"
#include "doda/ppo.hpp"
#include "doda/safety.hpp"
#include "doda/sim.hpp"

namespace doda::harness {

/// Inter-arrival interval band, in seconds.
struct Density {
  std::string label;
  double min_s = 0.0;
  double max_s = 0.0;
};

struct NetConfig {
  int hidden1 = 32;
  int hidden2 = 32;
  double p_drop = 0.2;  // dropout during training rollouts and updates
};

struct TrainingConfig {
  std::string train_case = "A";
  int episodes = 3000;
  int rollout_episodes = 4;  // episodes collected per PPO update
  int rolling_window = 50;   // window for picking the best checkpoint
};

struct EvalConfig {
  std::vector<std::string> cases = {"B", "C", "D"};
  std::vector<std::string> modes = {"baseline", "da1", "da2", "do", "da1do", "da2do"};
  int episodes = 50;
};

struct ExperimentConfig {
  sim::SimConfig sim;
  NetConfig net;
  ppo::PPOConfig ppo;
  safety::DodaConfig doda;  // mode is chosen per evaluation cell
  TrainingConfig training;
  EvalConfig eval;
  Density default_density{"default", 180.0, 360.0};
  Density high_density{"high", 156.0, 180.0};
  Density low_density{"low", 360.0, 600.0};
  std::uint64_t seed = 1;
  int threads = 0;            // 0: hardware concurrency; results do not depend on it
  std::string geometry_file;  // empty: built-in table

  void validate() const;
  net::LayerSizes layer_sizes() const;
};

std::string config_to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& config);
/// Hash of everything that influences results (seed and thread count excluded).
std::string config_hash(const ExperimentConfig& config);
/// FNV-1a of a file's bytes, as 16 hex digits.
std::string file_hash(const std::string& path);

/// Geometry named by the config, or the built-in table.
const sim::GeometryTable& geometry_for(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Episodes

using DecisionFn = std::function<Action(sim::AircraftId, const StateVector&)>;
using StepObserver = std::function<void(const sim::World&, const sim::JointActions&,
                                        std::span<const sim::ConflictEvent>)>;

/// Runs one simulation to termination. The spawn schedule is a function of
/// env_seed only. Decisions are requested in ascending aircraft id order.
sim::EpisodeResult run_episode(std::shared_ptr<const sim::Airspace> airspace,
                               const sim::SimConfig& sim_config, std::uint64_t env_seed,
                               const DecisionFn& decide, const StepObserver& observer = {});

struct EpisodeRollout {
  ppo::RolloutBuffer buffer;
  sim::EpisodeResult result;
  double mean_reward = 0.0;
};

/// Training rollout with the dropout-masked stochastic policy.
EpisodeRollout collect_episode(std::shared_ptr<const sim::Airspace> airspace,
                               const sim::SimConfig& sim_config, const net::NetworkParams& params,
                               double p_drop, std::uint64_t env_seed, std::uint64_t decision_seed);

/// Evaluation episode with frozen parameters and the given safety mode.
sim::EpisodeResult evaluate_episode(std::shared_ptr<const sim::Airspace> airspace,
                                    const sim::SimConfig& sim_config,
                                    const net::NetworkParams& params,
                                    const safety::DodaConfig& doda, std::uint64_t env_seed,
                                    std::uint64_t decision_seed);

// ---------------------------------------------------------------------------
// Training

struct TrainingRecord {
  int episode = 0;
  int score = 0;
  int spawned = 0;
  double mean_reward = 0.0;
  ppo::UpdateStats update;
};

struct TrainOutcome {
  net::NetworkParams final_params;
  net::NetworkParams best_params;
  double best_rolling_mean = 0.0;
  std::vector<TrainingRecord> log;
};

TrainOutcome train(const ExperimentConfig& config, std::uint64_t seed,
                   const std::function<void(const TrainingRecord&)>& on_episode = {});

std::string training_record_json(const TrainingRecord& record);

struct TrainPaths {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log;
  std::filesystem::path config;
};

/// Trains and writes checkpoint_final.json, checkpoint_best.json,
/// train_log.jsonl and config.json into out_dir.
TrainPaths cmd_train(const ExperimentConfig& config, std::uint64_t seed,
                     const std::filesystem::path& out_dir,
                     const std::function<void(const TrainingRecord&)>& on_episode = {});

// ---------------------------------------------------------------------------
// Evaluation

struct ResultRow {
  std::string case_id;
  std::string density;
  std::string mode;
  double mean_score = 0.0;
  double std_score = 0.0;
  int episodes = 0;
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  std::vector<int> scores;
  std::vector<int> spawned;
};

struct EvalRequest {
  std::vector<sim::CaseId> cases;
  std::vector<safety::Mode> modes;
  Density density;
  int episodes = 50;
  std::uint64_t seed = 1;
};

/// Seeds of evaluation episode `index` in a (case, density) cell. Every mode
/// uses the same pair, which keeps the comparison paired.
std::uint64_t eval_env_seed(std::uint64_t seed, sim::CaseId c, const Density& d, int index);
std::uint64_t eval_decision_seed(std::uint64_t seed, sim::CaseId c, const Density& d, int index);

/// One row per (case, mode) in request order (cases outer, modes inner).
std::vector<ResultRow> evaluate(const ExperimentConfig& config, const net::NetworkParams& params,
                                const std::string& checkpoint_hash, const EvalRequest& request);

/// Loads the checkpoint, checks it against the configured dimensions and
/// evaluates. Throws ConfigError on a mismatch.
std::vector<ResultRow> cmd_eval(const ExperimentConfig& config, const std::string& checkpoint,
                                const EvalRequest& request);
/// All six modes on B, C, D at the default density.
std::vector<ResultRow> cmd_ablate(const ExperimentConfig& config, const std::string& checkpoint,
                                  std::uint64_t seed);
/// da1do, da2do and baseline on B, C, D at high then low density.
std::vector<ResultRow> cmd_density(const ExperimentConfig& config, const std::string& checkpoint,
                                   std::uint64_t seed);

/// Writes the summary table (CSV) to `path` and per-episode records to
/// `<stem>_episodes.jsonl` beside it. Returns the detail path.
std::filesystem::path write_results(const std::vector<ResultRow>& rows,
                                    const std::filesystem::path& path);

std::string results_csv(const std::vector<ResultRow>& rows);

}  // namespace doda::harness
