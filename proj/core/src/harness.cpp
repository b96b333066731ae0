#include "doda/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "doda/errors.hpp"
#include "json.hpp"

namespace doda::harness {

namespace {

using nlohmann::ordered_json;

// Runs fn(0..n-1) on up to `threads` workers. Each index writes its own
// output slot, so the result does not depend on scheduling. The first
// exception is rethrown on the calling thread.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mutex;
  std::size_t next = 0;
  std::exception_ptr error;
  auto work = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mutex);
        if (error || next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::shared_ptr<const sim::Airspace> airspace_for(const ExperimentConfig& config, sim::CaseId c) {
  return std::make_shared<const sim::Airspace>(sim::build_case(c, geometry_for(config)));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void check_dimensions(const ExperimentConfig& config, const net::NetworkParams& params,
                      const std::string& what) {
  const auto have = params.sizes();
  const auto want = config.layer_sizes();
  if (have != want) {
    std::ostringstream msg;
    msg << what << ": network is " << have.input << "-" << have.hidden1 << "-" << have.hidden2
        << " but the configuration expects " << want.input << "-" << want.hidden1 << "-"
        << want.hidden2;
    throw ConfigError(msg.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Episodes

sim::EpisodeResult run_episode(std::shared_ptr<const sim::Airspace> airspace,
                               const sim::SimConfig& sim_config, std::uint64_t env_seed,
                               const DecisionFn& decide, const StepObserver& observer) {
  Rng spawn_rng(derive_seed(env_seed, "spawn"));
  const auto schedule = sim::spawn_schedule({sim_config.interval_min_s, sim_config.interval_max_s},
                                            sim_config.aircraft_per_route,
                                            static_cast<int>(airspace->routes.size()), spawn_rng);
  sim::World world(std::move(airspace), sim_config, schedule);
  sim::JointActions actions;
  while (!world.done()) {
    actions.clear();
    for (sim::AircraftId id : world.active_ids()) {
      actions.emplace(id, decide(id, sim::observe(world, id)));
    }
    const auto events = world.step(actions, sim_config.dt_s);
    if (observer) observer(world, actions, events);
  }
  return world.result();
}

EpisodeRollout collect_episode(std::shared_ptr<const sim::Airspace> airspace,
                               const sim::SimConfig& sim_config, const net::NetworkParams& params,
                               double p_drop, std::uint64_t env_seed,
                               std::uint64_t decision_seed) {
  Rng mask_rng(derive_seed(decision_seed, "mask"));
  Rng policy_rng(derive_seed(decision_seed, "policy"));
  const auto sizes = params.sizes();

  std::map<sim::AircraftId, ppo::Trajectory> open;
  EpisodeRollout rollout;
  double reward_sum = 0.0;
  std::size_t reward_count = 0;

  auto decide = [&](sim::AircraftId id, const StateVector& s) {
    ppo::Transition t;
    t.state = s;
    net::ForwardOutput out;
    if (p_drop > 0.0) {
      t.mask = net::sample_mask(p_drop, sizes, mask_rng);
      out = net::forward(params, s, *t.mask);
    } else {
      out = net::forward(params, s);
    }
    const std::size_t a = policy_rng.categorical(out.action_probs.probs);
    t.action = action_from_index(a);
    t.value_estimate = out.value;
    t.action_prob_old = out.action_probs.probs[a];
    open[id].steps.push_back(std::move(t));
    return action_from_index(a);
  };

  auto observer = [&](const sim::World& world, const sim::JointActions& actions,
                      std::span<const sim::ConflictEvent> events) {
    for (const auto& [id, action] : actions) {
      auto it = open.find(id);
      auto& t = it->second.steps.back();
      t.reward = sim::compute_reward(world, id, events, action);
      reward_sum += t.reward;
      ++reward_count;
      if (world.aircraft(id).status != sim::AircraftStatus::kActive) {
        t.done = true;
        rollout.buffer.add(std::move(it->second));
        open.erase(it);
      }
    }
    // Step limit reached with aircraft still flying: bootstrap from V(s_T).
    if (world.done()) {
      for (auto& [id, traj] : open) {
        if (world.aircraft(id).status == sim::AircraftStatus::kActive) {
          traj.bootstrap_value = net::forward(params, sim::observe(world, id)).value;
        }
      }
    }
  };

  rollout.result = run_episode(airspace, sim_config, env_seed, decide, observer);

  for (auto& [id, traj] : open) rollout.buffer.add(std::move(traj));
  rollout.mean_reward = reward_count > 0 ? reward_sum / static_cast<double>(reward_count) : 0.0;
  return rollout;
}

sim::EpisodeResult evaluate_episode(std::shared_ptr<const sim::Airspace> airspace,
                                    const sim::SimConfig& sim_config,
                                    const net::NetworkParams& params,
                                    const safety::DodaConfig& doda, std::uint64_t env_seed,
                                    std::uint64_t decision_seed) {
  safety::SelectionStreams streams(decision_seed);
  auto decide = [&](sim::AircraftId, const StateVector& s) {
    return safety::doda_select(params, s, doda, streams);
  };
  return run_episode(std::move(airspace), sim_config, env_seed, decide);
}

// ---------------------------------------------------------------------------
// Training

std::string training_record_json(const TrainingRecord& r) {
  ordered_json j;
  j["episode"] = r.episode;
  j["score"] = r.score;
  j["spawned"] = r.spawned;
  j["mean_reward"] = r.mean_reward;
  j["objective"] = r.update.objective;
  j["surrogate"] = r.update.surrogate;
  j["entropy"] = r.update.entropy;
  j["value_loss"] = r.update.value_loss;
  j["clip_fraction"] = r.update.clip_fraction;
  j["update_aborted"] = r.update.aborted;
  return j.dump();
}

TrainOutcome train(const ExperimentConfig& config, std::uint64_t seed,
                   const std::function<void(const TrainingRecord&)>& on_episode) {
  config.validate();
  const auto airspace = airspace_for(config, sim::parse_case(config.training.train_case));

  Rng init_rng(derive_seed(seed, "init"));
  Rng shuffle_rng(derive_seed(seed, "shuffle"));
  net::NetworkParams params = net::init_params(config.layer_sizes(), init_rng);
  ppo::Adam adam(params.parameter_count());

  TrainOutcome outcome;
  outcome.best_params = params;
  outcome.best_rolling_mean = -std::numeric_limits<double>::infinity();
  std::deque<int> window;
  double window_sum = 0.0;
  const auto window_size = static_cast<std::size_t>(config.training.rolling_window);

  const int budget = config.training.episodes;
  int episode = 0;
  while (episode < budget) {
    const int batch = std::min(config.training.rollout_episodes, budget - episode);
    std::vector<EpisodeRollout> rollouts(static_cast<std::size_t>(batch));
    parallel_for(rollouts.size(), config.threads, [&](std::size_t k) {
      const auto index = static_cast<std::uint64_t>(episode) + k;
      rollouts[k] = collect_episode(airspace, config.sim, params, config.net.p_drop,
                                    derive_seed(seed, "train-env", index),
                                    derive_seed(seed, "train-decide", index));
    });

    ppo::RolloutBuffer buffer;
    for (auto& r : rollouts) {
      window.push_back(r.result.score);
      window_sum += r.result.score;
      if (window.size() > window_size) {
        window_sum -= window.front();
        window.pop_front();
      }
      // The checkpoint is the policy that produced these episodes.
      if (window.size() == window_size || budget < static_cast<int>(window_size)) {
        const double mean = window_sum / static_cast<double>(window.size());
        if (mean > outcome.best_rolling_mean) {
          outcome.best_rolling_mean = mean;
          outcome.best_params = params;
        }
      }
      buffer.merge(std::move(r.buffer));
    }

    ppo::UpdateStats stats;
    if (!buffer.empty()) {
      auto result = ppo::update(params, buffer, config.ppo, shuffle_rng, adam);
      params = std::move(result.params);
      stats = result.stats;
    }

    for (int k = 0; k < batch; ++k) {
      const auto& r = rollouts[static_cast<std::size_t>(k)];
      TrainingRecord rec{episode + k, r.result.score, r.result.spawned, r.mean_reward, stats};
      if (on_episode) on_episode(rec);
      outcome.log.push_back(rec);
    }
    episode += batch;
  }

  if (budget == 0) outcome.best_rolling_mean = 0.0;
  outcome.final_params = std::move(params);
  return outcome;
}

TrainPaths cmd_train(const ExperimentConfig& config, std::uint64_t seed,
                     const std::filesystem::path& out_dir,
                     const std::function<void(const TrainingRecord&)>& on_episode) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  TrainPaths paths{out_dir / "checkpoint_final.json", out_dir / "checkpoint_best.json",
                   out_dir / "train_log.jsonl", out_dir / "config.json"};
  ExperimentConfig resolved = config;
  resolved.seed = seed;
  save_config(paths.config.string(), resolved);

  std::ofstream log(paths.log, std::ios::binary | std::ios::trunc);
  if (!log) throw ConfigError("cannot write " + paths.log.string());
  auto record = [&](const TrainingRecord& r) {
    log << training_record_json(r) << '\n';
    if (on_episode) on_episode(r);
  };
  const auto outcome = train(config, seed, record);
  log.flush();

  const net::CheckpointMeta meta{config_hash(config), seed, config.net.p_drop};
  net::save_checkpoint(paths.final_checkpoint.string(), outcome.final_params, meta);
  net::save_checkpoint(paths.best_checkpoint.string(), outcome.best_params, meta);
  return paths;
}

// ---------------------------------------------------------------------------
// Evaluation

std::uint64_t eval_env_seed(std::uint64_t seed, sim::CaseId c, const Density& d, int index) {
  const std::string label = std::string("eval-env:") + sim::to_char(c) + ":" + d.label;
  return derive_seed(seed, label, static_cast<std::uint64_t>(index));
}

std::uint64_t eval_decision_seed(std::uint64_t seed, sim::CaseId c, const Density& d, int index) {
  const std::string label = std::string("eval-decide:") + sim::to_char(c) + ":" + d.label;
  return derive_seed(seed, label, static_cast<std::uint64_t>(index));
}

std::vector<ResultRow> evaluate(const ExperimentConfig& config, const net::NetworkParams& params,
                                const std::string& checkpoint_hash, const EvalRequest& request) {
  config.validate();
  check_dimensions(config, params, "evaluate");
  if (request.episodes < 1) throw ConfigError("evaluate: episodes must be positive");
  if (!(request.density.min_s > 0 && request.density.min_s <= request.density.max_s)) {
    throw ConfigError("evaluate: invalid density band");
  }

  sim::SimConfig sim_config = config.sim;
  sim_config.interval_min_s = request.density.min_s;
  sim_config.interval_max_s = request.density.max_s;

  std::vector<ResultRow> rows;
  std::map<sim::CaseId, std::shared_ptr<const sim::Airspace>> airspaces;
  for (auto c : request.cases) {
    if (!airspaces.count(c)) airspaces[c] = airspace_for(config, c);
    for (auto m : request.modes) {
      ResultRow row;
      row.case_id = std::string(1, sim::to_char(c));
      row.density = request.density.label;
      row.mode = std::string(safety::to_string(m));
      row.episodes = request.episodes;
      row.seed = request.seed;
      row.checkpoint_hash = checkpoint_hash;
      row.scores.assign(static_cast<std::size_t>(request.episodes), 0);
      row.spawned.assign(static_cast<std::size_t>(request.episodes), 0);
      rows.push_back(std::move(row));
    }
  }

  const std::size_t per_row = static_cast<std::size_t>(request.episodes);
  const std::size_t num_modes = request.modes.size();
  parallel_for(rows.size() * per_row, config.threads, [&](std::size_t job) {
    const std::size_t r = job / per_row;
    const int e = static_cast<int>(job % per_row);
    const sim::CaseId c = request.cases[r / num_modes];
    safety::DodaConfig doda = config.doda;
    doda.mode = request.modes[r % num_modes];
    const auto result = evaluate_episode(
        airspaces.at(c), sim_config, params, doda, eval_env_seed(request.seed, c, request.density, e),
        eval_decision_seed(request.seed, c, request.density, e));
    rows[r].scores[static_cast<std::size_t>(e)] = sim::episode_score(result);
    rows[r].spawned[static_cast<std::size_t>(e)] = result.spawned;
  });

  for (auto& row : rows) {
    const double n = static_cast<double>(row.scores.size());
    double mean = 0.0;
    for (int s : row.scores) mean += s;
    mean /= n;
    double var = 0.0;
    for (int s : row.scores) var += (s - mean) * (s - mean);
    row.mean_score = mean;
    row.std_score = row.scores.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  }
  return rows;
}

std::vector<ResultRow> cmd_eval(const ExperimentConfig& config, const std::string& checkpoint,
                                const EvalRequest& request) {
  auto [params, meta] = net::load_checkpoint(checkpoint);
  check_dimensions(config, params, "checkpoint " + checkpoint);
  return evaluate(config, params, file_hash(checkpoint), request);
}

std::vector<ResultRow> cmd_ablate(const ExperimentConfig& config, const std::string& checkpoint,
                                  std::uint64_t seed) {
  EvalRequest request;
  for (const auto& c : config.eval.cases) request.cases.push_back(sim::parse_case(c));
  request.modes = safety::all_modes();
  request.density = config.default_density;
  request.episodes = config.eval.episodes;
  request.seed = seed;
  return cmd_eval(config, checkpoint, request);
}

std::vector<ResultRow> cmd_density(const ExperimentConfig& config, const std::string& checkpoint,
                                   std::uint64_t seed) {
  auto [params, meta] = net::load_checkpoint(checkpoint);
  check_dimensions(config, params, "checkpoint " + checkpoint);
  const std::string hash = file_hash(checkpoint);
  std::vector<ResultRow> rows;
  for (const Density* d : {&config.high_density, &config.low_density}) {
    EvalRequest request;
    for (const auto& c : config.eval.cases) request.cases.push_back(sim::parse_case(c));
    request.modes = {safety::Mode::kDa1Dropout, safety::Mode::kDa2Dropout,
                     safety::Mode::kBaseline};
    request.density = *d;
    request.episodes = config.eval.episodes;
    request.seed = seed;
    auto part = evaluate(config, params, hash, request);
    rows.insert(rows.end(), std::make_move_iterator(part.begin()),
                std::make_move_iterator(part.end()));
  }
  return rows;
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << "case,density,mode,mean_score,std_score,episodes,seed,checkpoint_hash\n";
  for (const auto& r : rows) {
    out << r.case_id << ',' << r.density << ',' << r.mode << ',' << format_double(r.mean_score)
        << ',' << format_double(r.std_score) << ',' << r.episodes << ',' << r.seed << ','
        << r.checkpoint_hash << '\n';
  }
  return out.str();
}

std::filesystem::path write_results(const std::vector<ResultRow>& rows,
                                    const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << results_csv(rows);
  }
  const auto detail = path.parent_path() / (path.stem().string() + "_episodes.jsonl");
  std::ofstream out(detail, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + detail.string());
  for (const auto& r : rows) {
    for (std::size_t e = 0; e < r.scores.size(); ++e) {
      ordered_json j;
      j["case"] = r.case_id;
      j["density"] = r.density;
      j["mode"] = r.mode;
      j["episode"] = e;
      j["score"] = r.scores[e];
      j["spawned"] = r.spawned[e];
      out << j.dump() << '\n';
    }
  }
  return detail;
}

}  // namespace doda::harness
