#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

namespace doda {

/// Discrete speed advisories.
enum class Action : int { kDecelerate = 0, kHold = 1, kAccelerate = 2 };

inline constexpr std::size_t kNumActions = 3;

constexpr std::size_t index_of(Action a) { return static_cast<std::size_t>(a); }
constexpr Action action_from_index(std::size_t i) { return static_cast<Action>(i); }

/// Probabilities over the action set.
struct ActionDistribution {
  std::array<double, kNumActions> probs{};

  double operator[](Action a) const { return probs[index_of(a)]; }
  double operator[](std::size_t i) const { return probs[i]; }

  static ActionDistribution point_mass(Action a) {
    ActionDistribution d;
    d.probs[index_of(a)] = 1.0;
    return d;
  }
  static ActionDistribution uniform() {
    ActionDistribution d;
    d.probs.fill(1.0 / static_cast<double>(kNumActions));
    return d;
  }

  /// Nonnegative components summing to one within tol.
  bool valid(double tol = 1e-9) const;
};

/// Normalized observation; every component lies in [0, 1].
struct StateVector {
  std::vector<double> values;

  StateVector() = default;
  explicit StateVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  bool operator==(const StateVector&) const = default;

  bool in_unit_box() const;
};

}  // namespace doda
