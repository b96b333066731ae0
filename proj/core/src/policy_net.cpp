#include "doda/policy_net.hpp"

#include <algorithm>
#include <cmath>

#include "doda/errors.hpp"

namespace doda::net {

namespace {

// Visits every parameter block in flattening order.
template <typename Params, typename Fn>
void for_each_block(Params& p, Fn&& fn) {
  fn(p.w1.data(), p.w1.size());
  fn(p.b1.data(), p.b1.size());
  fn(p.w2.data(), p.w2.size());
  fn(p.b2.data(), p.b2.size());
  fn(p.w_pi.data(), p.w_pi.size());
  fn(p.b_pi.data(), p.b_pi.size());
  fn(p.w_v.data(), p.w_v.size());
  fn(&p.b_v, Eigen::Index{1});
}

struct Activations {
  Eigen::VectorXd x;
  Eigen::VectorXd h1;  // tanh output
  Eigen::VectorXd g1;  // after mask and scaling
  Eigen::VectorXd h2;
  Eigen::VectorXd g2;
  ForwardOutput out;
};

Eigen::VectorXd mask_vector(const std::vector<std::uint8_t>& m, double scale) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) v[static_cast<Eigen::Index>(i)] = m[i] * scale;
  return v;
}

void check_mask(const NetworkParams& params, const DropoutMask& mask) {
  if (static_cast<Eigen::Index>(mask.h1.size()) != params.w1.rows() ||
      static_cast<Eigen::Index>(mask.h2.size()) != params.w2.rows()) {
    throw ContractViolation("dropout mask does not match hidden layer sizes");
  }
}

void run_forward(const NetworkParams& params, const StateVector& state, const DropoutMask* mask,
                 Activations& act) {
  if (static_cast<Eigen::Index>(state.size()) != params.w1.cols()) {
    throw ContractViolation("forward: state length " + std::to_string(state.size()) +
                            " does not match input size " + std::to_string(params.w1.cols()));
  }
  act.x = Eigen::Map<const Eigen::VectorXd>(state.values.data(),
                                            static_cast<Eigen::Index>(state.size()));
  act.h1 = (params.w1 * act.x + params.b1).array().tanh().matrix();
  if (mask) {
    check_mask(params, *mask);
    act.g1 = act.h1.cwiseProduct(mask_vector(mask->h1, mask->keep_scale()));
  } else {
    act.g1 = act.h1;
  }
  act.h2 = (params.w2 * act.g1 + params.b2).array().tanh().matrix();
  if (mask) {
    act.g2 = act.h2.cwiseProduct(mask_vector(mask->h2, mask->keep_scale()));
  } else {
    act.g2 = act.h2;
  }
  const Eigen::VectorXd logits = params.w_pi * act.g2 + params.b_pi;
  for (std::size_t a = 0; a < kNumActions; ++a) {
    act.out.logits[a] = logits[static_cast<Eigen::Index>(a)];
  }
  act.out.action_probs = softmax(act.out.logits);
  act.out.value = params.w_v.dot(act.g2) + params.b_v;
}

}  // namespace

// ---------------------------------------------------------------------------
// NetworkParams

NetworkParams NetworkParams::zeros(const LayerSizes& s) {
  NetworkParams p;
  p.w1 = Eigen::MatrixXd::Zero(s.hidden1, s.input);
  p.b1 = Eigen::VectorXd::Zero(s.hidden1);
  p.w2 = Eigen::MatrixXd::Zero(s.hidden2, s.hidden1);
  p.b2 = Eigen::VectorXd::Zero(s.hidden2);
  p.w_pi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kNumActions), s.hidden2);
  p.b_pi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kNumActions));
  p.w_v = Eigen::RowVectorXd::Zero(s.hidden2);
  p.b_v = 0.0;
  return p;
}

LayerSizes NetworkParams::sizes() const {
  return {static_cast<int>(w1.cols()), static_cast<int>(w1.rows()), static_cast<int>(w2.rows())};
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for_each_block(*this, [&n](const double*, Eigen::Index size) { n += static_cast<std::size_t>(size); });
  return n;
}

bool NetworkParams::all_finite() const {
  bool ok = true;
  for_each_block(*this, [&ok](const double* d, Eigen::Index size) {
    for (Eigen::Index i = 0; i < size; ++i) ok = ok && std::isfinite(d[i]);
  });
  return ok;
}

double NetworkParams::squared_norm() const {
  double s = 0.0;
  for_each_block(*this, [&s](const double* d, Eigen::Index size) {
    for (Eigen::Index i = 0; i < size; ++i) s += d[i] * d[i];
  });
  return s;
}

std::vector<double> NetworkParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for_each_block(*this, [&flat](const double* d, Eigen::Index size) {
    flat.insert(flat.end(), d, d + size);
  });
  return flat;
}

void NetworkParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ContractViolation("assign: flat parameter vector has the wrong length");
  }
  std::size_t offset = 0;
  for_each_block(*this, [&](double* d, Eigen::Index size) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), size, d);
    offset += static_cast<std::size_t>(size);
  });
}

void NetworkParams::add_scaled(const NetworkParams& o, double s) {
  w1 += s * o.w1;
  b1 += s * o.b1;
  w2 += s * o.w2;
  b2 += s * o.b2;
  w_pi += s * o.w_pi;
  b_pi += s * o.b_pi;
  w_v += s * o.w_v;
  b_v += s * o.b_v;
}

void NetworkParams::scale(double f) {
  w1 *= f;
  b1 *= f;
  w2 *= f;
  b2 *= f;
  w_pi *= f;
  b_pi *= f;
  w_v *= f;
  b_v *= f;
}

bool NetworkParams::operator==(const NetworkParams& o) const {
  return sizes() == o.sizes() && flatten() == o.flatten();
}

// ---------------------------------------------------------------------------

NetworkParams init_params(const LayerSizes& sizes, Rng& rng) {
  if (sizes.input <= 0 || sizes.hidden1 <= 0 || sizes.hidden2 <= 0) {
    throw ConfigError("init_params: layer sizes must be positive");
  }
  NetworkParams p = NetworkParams::zeros(sizes);
  auto fill = [&rng](auto& m) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
    }
  };
  fill(p.w1);
  fill(p.w2);
  fill(p.w_pi);
  fill(p.w_v);
  return p;
}

DropoutMask sample_mask(double p_drop, const LayerSizes& sizes, Rng& rng) {
  if (!(p_drop >= 0.0 && p_drop < 1.0)) {
    throw ConfigError("sample_mask: drop probability must be in [0, 1)");
  }
  DropoutMask mask;
  mask.p_drop = p_drop;
  const double keep = 1.0 - p_drop;
  mask.h1.resize(static_cast<std::size_t>(sizes.hidden1));
  mask.h2.resize(static_cast<std::size_t>(sizes.hidden2));
  for (auto& m : mask.h1) m = rng.bernoulli(keep) ? 1 : 0;
  for (auto& m : mask.h2) m = rng.bernoulli(keep) ? 1 : 0;
  return mask;
}

ActionDistribution softmax(const std::array<double, kNumActions>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  ActionDistribution d;
  double sum = 0.0;
  for (std::size_t a = 0; a < kNumActions; ++a) {
    d.probs[a] = std::exp(logits[a] - mx);
    sum += d.probs[a];
  }
  for (auto& p : d.probs) p /= sum;
  return d;
}

ForwardOutput forward(const NetworkParams& params, const StateVector& state) {
  Activations act;
  run_forward(params, state, nullptr, act);
  return act.out;
}

ForwardOutput forward(const NetworkParams& params, const StateVector& state,
                      const DropoutMask& mask) {
  Activations act;
  run_forward(params, state, &mask, act);
  return act.out;
}

LossAndGradient backward(const NetworkParams& params, std::span<const NetInput> batch,
                         const LossHead& head) {
  LossAndGradient result{0.0, NetworkParams::zeros(params.sizes())};
  auto& g = result.grad;
  Activations act;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& in = batch[i];
    run_forward(params, *in.state, in.mask, act);
    const OutputGradient og = head(i, act.out);
    if (!std::isfinite(og.loss)) throw NumericError("backward: non-finite loss");
    result.loss += og.loss;

    Eigen::Vector3d d_logits(og.d_logits[0], og.d_logits[1], og.d_logits[2]);
    g.w_pi.noalias() += d_logits * act.g2.transpose();
    g.b_pi += d_logits;
    g.w_v.noalias() += og.d_value * act.g2.transpose();
    g.b_v += og.d_value;

    Eigen::VectorXd d_g2 = params.w_pi.transpose() * d_logits + params.w_v.transpose() * og.d_value;
    Eigen::VectorXd d_h2 =
        in.mask ? Eigen::VectorXd(d_g2.cwiseProduct(mask_vector(in.mask->h2, in.mask->keep_scale())))
                : d_g2;
    Eigen::VectorXd d_z2 = d_h2.array() * (1.0 - act.h2.array().square());
    g.w2.noalias() += d_z2 * act.g1.transpose();
    g.b2 += d_z2;

    Eigen::VectorXd d_g1 = params.w2.transpose() * d_z2;
    Eigen::VectorXd d_h1 =
        in.mask ? Eigen::VectorXd(d_g1.cwiseProduct(mask_vector(in.mask->h1, in.mask->keep_scale())))
                : d_g1;
    Eigen::VectorXd d_z1 = d_h1.array() * (1.0 - act.h1.array().square());
    g.w1.noalias() += d_z1 * act.x.transpose();
    g.b1 += d_z1;
  }
  if (!std::isfinite(result.loss) || !g.all_finite()) {
    throw NumericError("backward: non-finite gradient");
  }
  return result;
}

}  // namespace doda::net
