#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "doda/errors.hpp"
#include "doda/safety.hpp"
#include "oracles.hpp"

using namespace doda;
using namespace doda::safety;

namespace {

StateVector random_state(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.uniform();
  return StateVector(v);
}

// A network whose argmax is not decided by a single unit, so dropout matters.
net::NetworkParams random_net(std::uint64_t seed, double scale = 2.0) {
  Rng rng(seed);
  auto p = net::init_params({9, 32, 32}, rng);
  p.w_pi *= scale;
  return p;
}

}  // namespace

TEST(Modes, NamesRoundTrip) {
  for (Mode m : all_modes()) EXPECT_EQ(parse_mode(to_string(m)), m);
  EXPECT_EQ(all_modes().size(), 6u);
  EXPECT_EQ(to_string(Mode::kDa1Dropout), "da1do");
  EXPECT_THROW(parse_mode("dropout"), ConfigError);
  EXPECT_THROW(parse_pass_rule("vote"), ConfigError);
  DodaConfig c;
  c.m = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Perturbation, StaysInUnitBoxAndIsUniformInside) {
  Rng rng(1);
  const StateVector s(std::vector<double>{0.0, 0.05, 0.5, 0.95, 1.0});
  std::vector<double> interior;
  for (int i = 0; i < 100000; ++i) {
    const auto x = perturb_state(s, -0.1, 0.1, rng);
    ASSERT_TRUE(x.in_unit_box());
    interior.push_back(x[2] - 0.5);
  }
  std::sort(interior.begin(), interior.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < interior.size(); ++i) {
    const double ecdf = (i + 1.0) / interior.size();
    worst = std::max(worst, std::abs(ecdf - (interior[i] + 0.1) / 0.2));
  }
  EXPECT_LT(worst, 0.01);
}

TEST(MonteCarlo, CountingExample) {
  const std::vector<Action> a = {Action::kDecelerate, Action::kDecelerate, Action::kHold,
                                 Action::kAccelerate, Action::kDecelerate};
  const auto d = empirical_distribution(a);
  EXPECT_NEAR(d[0], 0.6, 1e-12);
  EXPECT_NEAR(d[1], 0.2, 1e-12);
  EXPECT_NEAR(d[2], 0.2, 1e-12);
}

TEST(MonteCarlo, NoDropoutGivesPointMassAtArgmax) {
  const auto p = random_net(2);
  Rng rng(3);
  SelectionStreams streams(4);
  for (int t = 0; t < 20; ++t) {
    const auto s = random_state(9, rng);
    const auto d = mc_action_distribution(p, s, 5, 0.0, PassRule::kArgmax, streams);
    const auto a = argmax_action(net::forward(p, s).action_probs);
    EXPECT_EQ(d[a], 1.0);
  }
}

TEST(MonteCarlo, ConvergesToMaskSamplingOracle) {
  const auto p = random_net(5);
  Rng rng(6);
  std::mt19937_64 gen(7);
  for (int t = 0; t < 3; ++t) {
    const auto s = random_state(9, rng);
    SelectionStreams streams(100 + t);
    const auto d = mc_action_distribution(p, s, 10000, 0.2, PassRule::kArgmax, streams);
    const auto ref = oracle::argmax_under_dropout(p, s.values, 0.2, 100000, gen);
    EXPECT_LT(oracle::total_variation(d.probs, ref), 0.01);
    EXPECT_TRUE(d.valid());
  }
}

TEST(Entropy, KnownValuesAndBounds) {
  EXPECT_NEAR(entropy(ActionDistribution::uniform()), std::log(3.0), 1e-9);
  EXPECT_EQ(entropy(ActionDistribution::point_mass(Action::kHold)), 0.0);
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    ActionDistribution d;
    double sum = 0;
    for (auto& x : d.probs) sum += (x = rng.uniform());
    for (auto& x : d.probs) x /= sum;
    const double h = entropy(d);
    ASSERT_GE(h, 0.0);
    ASSERT_LE(h, std::log(3.0) + 1e-12);
  }
}

TEST(Vote, MajorityWins) {
  Rng rng(9);
  const std::vector<Action> a = {Action::kAccelerate, Action::kHold, Action::kAccelerate,
                                 Action::kDecelerate, Action::kAccelerate};
  EXPECT_EQ(da1_select(a, rng), Action::kAccelerate);
}

TEST(Vote, TiesAreBrokenAmongTheTiedOnly) {
  const std::vector<Action> a = {Action::kDecelerate, Action::kAccelerate, Action::kHold,
                                 Action::kAccelerate, Action::kDecelerate};
  std::array<int, 3> seen{};
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    Rng rng(seed);
    ++seen[index_of(da1_select(a, rng))];
  }
  EXPECT_EQ(seen[1], 0);
  EXPECT_NEAR(seen[0] / 400.0, 0.5, 0.1);
}

TEST(Vote, OutputCountIsMaximal) {
  Rng rng(10);
  for (int t = 0; t < 2000; ++t) {
    std::vector<Action> a(1 + rng.uniform_index(9));
    for (auto& x : a) x = action_from_index(rng.uniform_index(3));
    const Action chosen = da1_select(a, rng);
    const auto count = [&](Action k) { return std::count(a.begin(), a.end(), k); };
    for (std::size_t k = 0; k < 3; ++k) ASSERT_GE(count(chosen), count(action_from_index(k)));
  }
}

TEST(MinEntropy, PointMassDominates) {
  const std::vector<ActionDistribution> d = {ActionDistribution::uniform(),
                                             ActionDistribution::point_mass(Action::kAccelerate),
                                             ActionDistribution{{0.5, 0.5, 0.0}}};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    ASSERT_EQ(da2_select(d, rng), Action::kAccelerate);
  }
  EXPECT_EQ(min_entropy_index(d), 1u);
}

TEST(MinEntropy, TiesTakeTheLowestIndex) {
  const std::vector<ActionDistribution> d = {ActionDistribution{{0.5, 0.5, 0.0}},
                                             ActionDistribution{{0.0, 0.5, 0.5}},
                                             ActionDistribution{{0.5, 0.0, 0.5}}};
  EXPECT_EQ(min_entropy_index(d), 0u);
}

TEST(Reduction, DegenerateSettingsReproduceTheBaselinePass) {
  const auto p = random_net(11, 1.0);
  Rng rng(12);
  DodaConfig cfg;
  cfg.m = cfg.n = 1;
  cfg.noise_low = cfg.noise_high = 0.0;
  cfg.p_drop = 0.0;
  cfg.pass_rule = PassRule::kCategorical;
  for (int t = 0; t < 50; ++t) {
    const auto s = random_state(9, rng);
    const auto base = net::forward(p, s).action_probs;
    Rng noise(t);
    const auto same = perturb_state(s, 0.0, 0.0, noise);
    const auto da = net::forward(p, same).action_probs;
    const auto mask = net::sample_mask(0.0, p.sizes(), noise);
    const auto masked = net::forward(p, same, mask).action_probs;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(da[k], base[k], 1e-12);
      EXPECT_NEAR(masked[k], base[k], 1e-12);
    }
    std::vector<Action> actions;
    for (Mode m : all_modes()) {
      cfg.mode = m;
      SelectionStreams streams(1000 + t);
      actions.push_back(doda_select(p, s, cfg, streams));
    }
    for (Action a : actions) EXPECT_EQ(a, actions.front()) << "state " << t;
  }
}

TEST(Select, DeterministicGivenSeed) {
  const auto p = random_net(13);
  Rng rng(14);
  const auto s = random_state(9, rng);
  for (Mode m : all_modes()) {
    DodaConfig cfg;
    cfg.mode = m;
    SelectionStreams a(5), b(5);
    for (int i = 0; i < 20; ++i) ASSERT_EQ(doda_select(p, s, cfg, a), doda_select(p, s, cfg, b));
  }
}

TEST(Select, Da2DropoutWithPointMassIsCertain) {
  // Saturated logits: every pass agrees, so each MC distribution is a point mass.
  auto p = random_net(15);
  p.b_pi << -50.0, -50.0, 50.0;
  Rng rng(16);
  DodaConfig cfg;
  cfg.mode = Mode::kDa2Dropout;
  for (int t = 0; t < 50; ++t) {
    SelectionStreams streams(t);
    ASSERT_EQ(doda_select(p, random_state(9, rng), cfg, streams), Action::kAccelerate);
  }
}

// The implementation's selection frequencies against an independent
// simulation of the same procedure.
TEST(Select, Da1DropoutVoteMatchesMonteCarloOracle) {
  DodaConfig cfg;
  cfg.mode = Mode::kDa1Dropout;
  Rng rng(17);
  std::mt19937_64 gen(18);
  int agree = 0;
  const int instances = 3;
  for (int i = 0; i < instances; ++i) {
    const auto p = random_net(200 + i);
    const auto s = random_state(9, rng);
    const auto ref = oracle::da1do_vote_distribution(p, s.values, cfg.m, cfg.n, cfg.p_drop, 0.1,
                                                     100000, gen);
    std::array<double, 3> got{};
    const int runs = 10000;
    for (int r = 0; r < runs; ++r) {
      SelectionStreams streams(derive_seed(99, "vote-test", static_cast<std::uint64_t>(i * runs + r)));
      got[index_of(doda_select(p, s, cfg, streams))] += 1.0 / runs;
    }
    EXPECT_LT(oracle::total_variation(got, ref), 0.02) << "instance " << i;
    const auto mode_of = [](const std::array<double, 3>& d) {
      return std::max_element(d.begin(), d.end()) - d.begin();
    };
    agree += mode_of(got) == mode_of(ref);
  }
  EXPECT_GE(agree, instances * 95 / 100);
}
