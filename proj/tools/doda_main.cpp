// doda: train a shared speed-control policy and evaluate it with the
// execution-time safety modes.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "doda/errors.hpp"
#include "doda/harness.hpp"

namespace {

using namespace doda;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

harness::ExperimentConfig load(const Common& c) {
  harness::ExperimentConfig config =
      c.config_path.empty() ? harness::ExperimentConfig{} : harness::load_config(c.config_path);
  if (c.seed) config.seed = *c.seed;
  if (c.threads) config.threads = *c.threads;
  config.validate();
  return config;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Master seed (overrides the config)");
  cmd->add_option("--threads", c.threads, "Worker threads, 0 = all cores");
}

void print_rows(const std::vector<harness::ResultRow>& rows) {
  std::printf("%-5s %-8s %-9s %10s %10s %8s\n", "case", "density", "mode", "mean", "std",
              "episodes");
  for (const auto& r : rows) {
    std::printf("%-5s %-8s %-9s %10.2f %10.2f %8d\n", r.case_id.c_str(), r.density.c_str(),
                r.mode.c_str(), r.mean_score, r.std_score, r.episodes);
  }
}

harness::Density density_by_label(const harness::ExperimentConfig& config,
                                   const std::string& label) {
  if (label == "default") return config.default_density;
  if (label == "high") return config.high_density;
  if (label == "low") return config.low_density;
  throw ConfigError("unknown density '" + label + "' (expected default, high, low)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speed-control policy training and safety-module evaluation"};
  app.require_subcommand(1);

  Common train_opts;
  std::string train_out = "run";
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train on the training case with PPO");
  add_common(train, train_opts);
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_flag("--quiet", quiet, "No per-episode progress");

  Common eval_opts;
  std::string checkpoint;
  std::vector<std::string> cases;
  std::vector<std::string> modes;
  std::optional<int> episodes;
  std::string density = "default";
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--cases", cases, "Cases, e.g. B,C,D")->delimiter(',');
  eval->add_option("--modes", modes, "Modes: baseline,do,da1,da2,da1do,da2do")->delimiter(',');
  eval->add_option("--episodes", episodes, "Simulations per (case, mode)");
  eval->add_option("--density", density, "default, high or low");
  eval->add_option("--out", eval_out, "Summary CSV path");

  Common ablate_opts;
  std::string ablate_checkpoint, ablate_out;
  auto* ablate = app.add_subcommand("ablate", "Six-mode grid over B, C, D at default density");
  add_common(ablate, ablate_opts);
  ablate->add_option("--checkpoint", ablate_checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", ablate_out, "Summary CSV path");

  Common density_opts;
  std::string density_checkpoint, density_out;
  auto* sweep = app.add_subcommand("density", "High and low density sweep over B, C, D");
  add_common(sweep, density_opts);
  sweep->add_option("--checkpoint", density_checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", density_out, "Summary CSV path");

  Common dump_opts;
  auto* dump = app.add_subcommand("config", "Print the resolved configuration");
  add_common(dump, dump_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto config = load(train_opts);
      auto progress = [&](const harness::TrainingRecord& r) {
        if (!quiet && (r.episode + 1) % 50 == 0) {
          std::fprintf(stderr, "episode %5d  score %3d/%3d  reward %+.4f  entropy %.3f\n",
                       r.episode + 1, r.score, r.spawned, r.mean_reward, r.update.entropy);
        }
      };
      const auto paths = harness::cmd_train(config, config.seed, train_out, progress);
      std::printf("best checkpoint:  %s\nfinal checkpoint: %s\nlog:              %s\n",
                  paths.best_checkpoint.c_str(), paths.final_checkpoint.c_str(),
                  paths.log.c_str());
    } else if (*eval) {
      const auto config = load(eval_opts);
      harness::EvalRequest request;
      for (const auto& c : cases.empty() ? config.eval.cases : cases) {
        request.cases.push_back(sim::parse_case(c));
      }
      for (const auto& m : modes.empty() ? config.eval.modes : modes) {
        request.modes.push_back(safety::parse_mode(m));
      }
      request.density = density_by_label(config, density);
      request.episodes = episodes.value_or(config.eval.episodes);
      request.seed = config.seed;
      const auto rows = harness::cmd_eval(config, checkpoint, request);
      print_rows(rows);
      if (!eval_out.empty()) harness::write_results(rows, eval_out);
    } else if (*ablate) {
      const auto config = load(ablate_opts);
      const auto rows = harness::cmd_ablate(config, ablate_checkpoint, config.seed);
      print_rows(rows);
      if (!ablate_out.empty()) harness::write_results(rows, ablate_out);
    } else if (*sweep) {
      const auto config = load(density_opts);
      const auto rows = harness::cmd_density(config, density_checkpoint, config.seed);
      print_rows(rows);
      if (!density_out.empty()) harness::write_results(rows, density_out);
    } else if (*dump) {
      std::cout << harness::config_to_json(load(dump_opts));
    }
  } catch (const doda::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
