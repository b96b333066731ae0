#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

#include "doda/errors.hpp"
#include "doda/harness.hpp"
#include "json.hpp"

namespace doda::harness {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ordered_json density_json(const Density& d) {
  return {{"label", d.label}, {"min_s", d.min_s}, {"max_s", d.max_s}};
}

ordered_json to_ordered(const ExperimentConfig& c) {
  const auto& s = c.sim;
  const auto& p = c.ppo;
  const auto& d = c.doda;
  ordered_json j;
  j["sim"] = {
      {"separation_nm", s.separation_nm},     {"v_min_kn", s.v_min_kn},
      {"v_max_kn", s.v_max_kn},               {"v_init_kn", s.v_init_kn},
      {"dv_kn", s.dv_kn},                     {"accel_kn_per_s", s.accel_kn_per_s},
      {"dt_s", s.dt_s},                       {"neighbors", s.neighbors},
      {"obs_range_nm", s.obs_range_nm},       {"warning_radius_nm", s.warning_radius_nm},
      {"alpha", s.alpha},                     {"beta", s.beta},
      {"aircraft_per_route", s.aircraft_per_route},
      {"interval_min_s", s.interval_min_s},   {"interval_max_s", s.interval_max_s},
      {"max_steps", s.max_steps},
  };
  j["net"] = {{"hidden1", c.net.hidden1}, {"hidden2", c.net.hidden2}, {"p_drop", c.net.p_drop}};
  j["ppo"] = {
      {"gamma", p.gamma},
      {"lambda", p.lambda},
      {"clip_eps", p.clip_eps},
      {"c1", p.c1},
      {"c2", p.c2},
      {"epochs", p.epochs},
      {"minibatch_size", p.minibatch_size},
      {"learning_rate", p.learning_rate},
      {"weight_decay", p.weight_decay},
      {"adam_beta1", p.adam_beta1},
      {"adam_beta2", p.adam_beta2},
      {"adam_eps", p.adam_eps},
      {"max_grad_norm", p.max_grad_norm},
      {"normalize_advantages", p.normalize_advantages},
  };
  j["doda"] = {
      {"m", d.m},
      {"n", d.n},
      {"noise_low", d.noise_low},
      {"noise_high", d.noise_high},
      {"p_drop", d.p_drop},
      {"pass_rule", std::string(safety::to_string(d.pass_rule))},
  };
  j["training"] = {
      {"train_case", c.training.train_case},
      {"episodes", c.training.episodes},
      {"rollout_episodes", c.training.rollout_episodes},
      {"rolling_window", c.training.rolling_window},
  };
  j["eval"] = {{"cases", c.eval.cases}, {"modes", c.eval.modes}, {"episodes", c.eval.episodes}};
  j["densities"] = {
      {"default", density_json(c.default_density)},
      {"high", density_json(c.high_density)},
      {"low", density_json(c.low_density)},
  };
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["geometry_file"] = c.geometry_file;
  return j;
}

// Reads `key` from `obj` into `out` when present.
template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const char* where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(std::string("config: unknown key '") + it.key() + "' in " + where);
  }
}

void read_density(const json& j, const char* key, Density& d) {
  auto it = j.find(key);
  if (it == j.end()) return;
  reject_unknown(*it, {"label", "min_s", "max_s"}, key);
  read(*it, "label", d.label);
  read(*it, "min_s", d.min_s);
  read(*it, "max_s", d.max_s);
}

}  // namespace

void ExperimentConfig::validate() const {
  sim.validate();
  ppo.validate();
  doda.validate();
  if (net.hidden1 <= 0 || net.hidden2 <= 0) throw ConfigError("config: hidden sizes must be positive");
  if (!(net.p_drop >= 0 && net.p_drop < 1)) throw ConfigError("config: net.p_drop must be in [0, 1)");
  sim::parse_case(training.train_case);
  if (training.episodes < 0) throw ConfigError("config: training.episodes must be nonnegative");
  if (training.rollout_episodes < 1) throw ConfigError("config: training.rollout_episodes must be >= 1");
  if (training.rolling_window < 1) throw ConfigError("config: training.rolling_window must be >= 1");
  if (eval.episodes < 1) throw ConfigError("config: eval.episodes must be positive");
  for (const auto& c : eval.cases) sim::parse_case(c);
  for (const auto& m : eval.modes) safety::parse_mode(m);
  for (const Density* d : {&default_density, &high_density, &low_density}) {
    if (!(d->min_s > 0 && d->min_s <= d->max_s)) {
      throw ConfigError("config: density '" + d->label + "' needs 0 < min_s <= max_s");
    }
  }
  if (threads < 0) throw ConfigError("config: threads must be nonnegative");
}

net::LayerSizes ExperimentConfig::layer_sizes() const {
  return {static_cast<int>(sim.observation_size()), net.hidden1, net.hidden2};
}

std::string config_to_json(const ExperimentConfig& config) { return to_ordered(config).dump(2) + "\n"; }

ExperimentConfig config_from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown(j, {"sim", "net", "ppo", "doda", "training", "eval", "densities", "seed",
                       "threads", "geometry_file"},
                   "top level");
    if (auto it = j.find("sim"); it != j.end()) {
      auto& s = c.sim;
      const json& o = *it;
      reject_unknown(o, {"separation_nm", "v_min_kn", "v_max_kn", "v_init_kn", "dv_kn",
                         "accel_kn_per_s", "dt_s", "neighbors", "obs_range_nm",
                         "warning_radius_nm", "alpha", "beta", "aircraft_per_route",
                         "interval_min_s", "interval_max_s", "max_steps"},
                     "sim");
      read(o, "separation_nm", s.separation_nm);
      read(o, "v_min_kn", s.v_min_kn);
      read(o, "v_max_kn", s.v_max_kn);
      read(o, "v_init_kn", s.v_init_kn);
      read(o, "dv_kn", s.dv_kn);
      read(o, "accel_kn_per_s", s.accel_kn_per_s);
      read(o, "dt_s", s.dt_s);
      read(o, "neighbors", s.neighbors);
      read(o, "obs_range_nm", s.obs_range_nm);
      read(o, "warning_radius_nm", s.warning_radius_nm);
      read(o, "alpha", s.alpha);
      read(o, "beta", s.beta);
      read(o, "aircraft_per_route", s.aircraft_per_route);
      read(o, "interval_min_s", s.interval_min_s);
      read(o, "interval_max_s", s.interval_max_s);
      read(o, "max_steps", s.max_steps);
    }
    if (auto it = j.find("net"); it != j.end()) {
      reject_unknown(*it, {"hidden1", "hidden2", "p_drop"}, "net");
      read(*it, "hidden1", c.net.hidden1);
      read(*it, "hidden2", c.net.hidden2);
      read(*it, "p_drop", c.net.p_drop);
    }
    if (auto it = j.find("ppo"); it != j.end()) {
      auto& p = c.ppo;
      const json& o = *it;
      reject_unknown(o, {"gamma", "lambda", "clip_eps", "c1", "c2", "epochs", "minibatch_size",
                         "learning_rate", "weight_decay", "adam_beta1", "adam_beta2", "adam_eps",
                         "max_grad_norm", "normalize_advantages"},
                     "ppo");
      read(o, "gamma", p.gamma);
      read(o, "lambda", p.lambda);
      read(o, "clip_eps", p.clip_eps);
      read(o, "c1", p.c1);
      read(o, "c2", p.c2);
      read(o, "epochs", p.epochs);
      read(o, "minibatch_size", p.minibatch_size);
      read(o, "learning_rate", p.learning_rate);
      read(o, "weight_decay", p.weight_decay);
      read(o, "adam_beta1", p.adam_beta1);
      read(o, "adam_beta2", p.adam_beta2);
      read(o, "adam_eps", p.adam_eps);
      read(o, "max_grad_norm", p.max_grad_norm);
      read(o, "normalize_advantages", p.normalize_advantages);
    }
    if (auto it = j.find("doda"); it != j.end()) {
      auto& d = c.doda;
      const json& o = *it;
      reject_unknown(o, {"m", "n", "noise_low", "noise_high", "p_drop", "pass_rule"}, "doda");
      read(o, "m", d.m);
      read(o, "n", d.n);
      read(o, "noise_low", d.noise_low);
      read(o, "noise_high", d.noise_high);
      read(o, "p_drop", d.p_drop);
      if (auto r = o.find("pass_rule"); r != o.end()) {
        d.pass_rule = safety::parse_pass_rule(r->get<std::string>());
      }
    }
    if (auto it = j.find("training"); it != j.end()) {
      reject_unknown(*it, {"train_case", "episodes", "rollout_episodes", "rolling_window"},
                     "training");
      read(*it, "train_case", c.training.train_case);
      read(*it, "episodes", c.training.episodes);
      read(*it, "rollout_episodes", c.training.rollout_episodes);
      read(*it, "rolling_window", c.training.rolling_window);
    }
    if (auto it = j.find("eval"); it != j.end()) {
      reject_unknown(*it, {"cases", "modes", "episodes"}, "eval");
      read(*it, "cases", c.eval.cases);
      read(*it, "modes", c.eval.modes);
      read(*it, "episodes", c.eval.episodes);
    }
    if (auto it = j.find("densities"); it != j.end()) {
      reject_unknown(*it, {"default", "high", "low"}, "densities");
      read_density(*it, "default", c.default_density);
      read_density(*it, "high", c.high_density);
      read_density(*it, "low", c.low_density);
    }
    read(j, "seed", c.seed);
    read(j, "threads", c.threads);
    read(j, "geometry_file", c.geometry_file);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = config_from_json(ss.str());
  // Geometry paths are relative to the config file.
  if (!c.geometry_file.empty()) {
    std::filesystem::path g(c.geometry_file);
    if (g.is_relative()) {
      c.geometry_file = (std::filesystem::path(path).parent_path() / g).lexically_normal().string();
    }
  }
  return c;
}

void save_config(const std::string& path, const ExperimentConfig& config) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write config " + path);
  out << config_to_json(config);
}

std::string config_hash(const ExperimentConfig& config) {
  auto j = to_ordered(config);
  j.erase("seed");
  j.erase("threads");
  j.erase("geometry_file");
  std::string text = j.dump();
  // The geometry itself matters, not where it was read from.
  for (const auto& [case_id, routes] : geometry_for(config).cases) {
    text += sim::to_char(case_id);
    for (const auto& route : routes) {
      for (const auto& p : route) {
        text += ordered_json(p.x).dump() + "," + ordered_json(p.y).dump() + ";";
      }
      text += "|";
    }
  }
  return hex64(fnv1a(text));
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

const sim::GeometryTable& geometry_for(const ExperimentConfig& config) {
  if (config.geometry_file.empty()) return sim::default_geometry();
  static std::mutex mutex;
  static std::map<std::string, std::unique_ptr<sim::GeometryTable>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[config.geometry_file];
  if (!slot) slot = std::make_unique<sim::GeometryTable>(sim::load_geometry(config.geometry_file));
  return *slot;
}

}  // namespace doda::harness
