#include <fstream>
#include <sstream>

#include "doda/errors.hpp"
#include "doda/policy_net.hpp"
#include "json.hpp"

namespace doda::net {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "doda-checkpoint";
constexpr int kVersion = 1;

template <typename M>
json array_to_json(const M& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

template <typename M>
void array_from_json(const json& j, M& m, const char* name) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows != m.rows() || cols != m.cols() || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw ConfigError(std::string("checkpoint: array '") + name + "' has inconsistent shape");
  }
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
}

}  // namespace

std::string checkpoint_to_string(const NetworkParams& p, const CheckpointMeta& meta) {
  const auto s = p.sizes();
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["config_hash"] = meta.config_hash;
  j["seed"] = meta.seed;
  j["p_drop"] = meta.p_drop;
  j["layer_sizes"] = {{"input", s.input}, {"hidden1", s.hidden1}, {"hidden2", s.hidden2}};
  Eigen::Matrix<double, 1, 1> bv;
  bv(0, 0) = p.b_v;
  j["layers"] = {
      {"w1", array_to_json(p.w1)},      {"b1", array_to_json(p.b1)},
      {"w2", array_to_json(p.w2)},      {"b2", array_to_json(p.b2)},
      {"w_pi", array_to_json(p.w_pi)},  {"b_pi", array_to_json(p.b_pi)},
      {"w_v", array_to_json(p.w_v)},    {"b_v", array_to_json(bv)},
  };
  return j.dump(1) + "\n";
}

std::pair<NetworkParams, CheckpointMeta> checkpoint_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat || j.at("version").get<int>() != kVersion) {
      throw ConfigError("checkpoint: unsupported format or version");
    }
    CheckpointMeta meta;
    meta.config_hash = j.at("config_hash").get<std::string>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.p_drop = j.at("p_drop").get<double>();
    LayerSizes sizes;
    sizes.input = j.at("layer_sizes").at("input").get<int>();
    sizes.hidden1 = j.at("layer_sizes").at("hidden1").get<int>();
    sizes.hidden2 = j.at("layer_sizes").at("hidden2").get<int>();
    if (sizes.input <= 0 || sizes.hidden1 <= 0 || sizes.hidden2 <= 0) {
      throw ConfigError("checkpoint: non-positive layer size");
    }
    NetworkParams p = NetworkParams::zeros(sizes);
    const auto& layers = j.at("layers");
    array_from_json(layers.at("w1"), p.w1, "w1");
    array_from_json(layers.at("b1"), p.b1, "b1");
    array_from_json(layers.at("w2"), p.w2, "w2");
    array_from_json(layers.at("b2"), p.b2, "b2");
    array_from_json(layers.at("w_pi"), p.w_pi, "w_pi");
    array_from_json(layers.at("b_pi"), p.b_pi, "b_pi");
    array_from_json(layers.at("w_v"), p.w_v, "w_v");
    Eigen::Matrix<double, 1, 1> bv;
    array_from_json(layers.at("b_v"), bv, "b_v");
    p.b_v = bv(0, 0);
    if (!p.all_finite()) throw ConfigError("checkpoint: non-finite parameter");
    return {std::move(p), std::move(meta)};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const NetworkParams& params,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path);
  out << checkpoint_to_string(params, meta);
  if (!out) throw ConfigError("failed writing checkpoint " + path);
}

std::pair<NetworkParams, CheckpointMeta> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace doda::net
