#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "doda/errors.hpp"
#include "doda/sim.hpp"
#include "oracles.hpp"

using namespace doda;
using namespace doda::sim;

namespace {

constexpr double kKnS = 1.0 / 3600.0;  // knot-seconds to NM

std::shared_ptr<const Airspace> airspace(CaseId id) {
  return std::make_shared<const Airspace>(build_case(id, default_geometry()));
}

AircraftState active(AircraftId id, int route, double along, double speed = 250.0) {
  AircraftState a;
  a.id = id;
  a.route_id = route;
  a.along_track = along;
  a.speed = a.speed_cmd = speed;
  a.status = AircraftStatus::kActive;
  return a;
}

JointActions all(const World& w, Action a) {
  JointActions out;
  for (auto id : w.active_ids()) out[id] = a;
  return out;
}

}  // namespace

TEST(Geometry, DefaultCasesHaveExpectedTopology) {
  struct Expect {
    CaseId id;
    std::size_t routes, crossings, merges;
  };
  for (const auto& e : {Expect{CaseId::A, 2, 1, 0}, Expect{CaseId::B, 3, 2, 0},
                        Expect{CaseId::C, 3, 2, 1}, Expect{CaseId::D, 4, 4, 0}}) {
    const auto a = build_case(e.id, default_geometry());
    EXPECT_EQ(a.routes.size(), e.routes) << to_char(e.id);
    std::size_t crossings = 0, merges = 0;
    for (const auto& x : a.intersections) {
      (x.kind == IntersectionKind::kMerge ? merges : crossings)++;
      EXPECT_LT(a.route(x.route_a).distance_to(x.point), 1e-6);
      EXPECT_LT(a.route(x.route_b).distance_to(x.point), 1e-6);
      EXPECT_NEAR(distance(a.route(x.route_a).point_at(x.along_a), x.point), 0.0, 1e-9);
      EXPECT_NEAR(distance(a.route(x.route_b).point_at(x.along_b), x.point), 0.0, 1e-9);
    }
    EXPECT_EQ(crossings, e.crossings) << to_char(e.id);
    EXPECT_EQ(merges, e.merges) << to_char(e.id);
  }
}

TEST(Geometry, CaseACrossingIsAtTheCentre) {
  const auto a = build_case(CaseId::A, default_geometry());
  ASSERT_EQ(a.intersections.size(), 1u);
  EXPECT_NEAR(a.intersections[0].point.x, 25.0, 1e-12);
  EXPECT_NEAR(a.intersections[0].point.y, 25.0, 1e-12);
  EXPECT_NEAR(a.intersections[0].along_a, 25.0, 1e-12);
}

TEST(Geometry, ParseErrorsAreConfigErrors) {
  std::istringstream no_version("A 0 0 0\nA 0 1 0\n");
  EXPECT_THROW(parse_geometry(no_version), ConfigError);
  std::istringstream bad_row("version 1\nA 0 zero 0\n");
  EXPECT_THROW(parse_geometry(bad_row), ConfigError);
  std::istringstream gap("version 1\nA 0 0 0\nA 0 1 0\nA 2 0 1\nA 2 1 1\n");
  EXPECT_THROW(parse_geometry(gap), ConfigError);
  EXPECT_THROW(parse_case("E"), ConfigError);
  EXPECT_THROW(Route(0, {{0, 0}}), ConfigError);
}

TEST(Geometry, RoutePointAtFollowsPolyline) {
  Route r(0, {{0, 0}, {3, 4}, {3, 10}});
  EXPECT_DOUBLE_EQ(r.length(), 11.0);
  const Point p = r.point_at(7.0);
  EXPECT_NEAR(p.x, 3.0, 1e-12);
  EXPECT_NEAR(p.y, 6.0, 1e-12);
}

TEST(Conflicts, MatchesBruteForceOnRandomWorlds) {
  Rng rng(2024);
  for (int world = 0; world < 1000; ++world) {
    const auto n = static_cast<int>(rng.uniform_index(31));
    std::vector<Traffic> traffic;
    for (int i = 0; i < n; ++i) {
      // Small boxes keep conflicts frequent; snap some to the grid to hit cell edges.
      double x = rng.uniform(0, 20), y = rng.uniform(0, 20);
      if (rng.bernoulli(0.2)) x = 3.0 * std::floor(x / 3.0);
      traffic.push_back({i * 3 + 1, {x, y}});
    }
    const auto events = detect_conflicts(traffic, 3.0, 0.0);
    std::set<std::pair<int, int>> got;
    for (const auto& e : events) {
      ASSERT_LT(e.pair.first, e.pair.second);
      got.insert(e.pair);
    }
    ASSERT_EQ(got.size(), events.size());
    ASSERT_EQ(got, oracle::brute_force_conflicts(traffic, 3.0)) << "world " << world;
  }
}

TEST(Conflicts, ExactlyAtSeparationIsNotAConflict) {
  std::vector<Traffic> t = {{0, {0, 0}}, {1, {3, 0}}, {2, {0, 2.999}}};
  const auto events = detect_conflicts(t, 3.0, 0.0);
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].pair, std::make_pair(0, 2));
}

TEST(World, HoldKeepsSpeedAndAdvancesAlongRoute) {
  World w(airspace(CaseId::A), SimConfig{}, {active(0, 0, 0.0)}, 0.0);
  w.step(all(w, Action::kHold), 12.0);
  EXPECT_DOUBLE_EQ(w.aircraft(0).speed, 250.0);
  EXPECT_NEAR(w.aircraft(0).along_track, 250.0 * 12.0 * kKnS, 1e-12);
}

TEST(World, AccelerationIsRateLimited) {
  World w(airspace(CaseId::A), SimConfig{}, {active(0, 0, 0.0)}, 0.0);
  w.step(all(w, Action::kDecelerate), 12.0);
  // 250 -> 230 at 2 kn/s takes 10 s, then 2 s at 230.
  EXPECT_DOUBLE_EQ(w.aircraft(0).speed, 230.0);
  EXPECT_NEAR(w.aircraft(0).along_track, (0.5 * (250 + 230) * 10 + 230 * 2) * kKnS, 1e-12);

  SimConfig slow;
  slow.accel_kn_per_s = 1.0;
  World v(airspace(CaseId::A), slow, {active(0, 0, 0.0)}, 0.0);
  v.step(all(v, Action::kAccelerate), 12.0);
  EXPECT_DOUBLE_EQ(v.aircraft(0).speed, 262.0);
  EXPECT_DOUBLE_EQ(v.aircraft(0).speed_cmd, 270.0);
}

TEST(World, SpeedCommandIsClamped) {
  World w(airspace(CaseId::A), SimConfig{}, {active(0, 0, 0.0, 290.0)}, 0.0);
  w.step(all(w, Action::kAccelerate), 12.0);
  EXPECT_DOUBLE_EQ(w.aircraft(0).speed_cmd, 300.0);
  w.step(all(w, Action::kAccelerate), 12.0);
  EXPECT_DOUBLE_EQ(w.aircraft(0).speed, 300.0);
  for (int i = 0; i < 10; ++i) w.step(all(w, Action::kDecelerate), 12.0);
  EXPECT_DOUBLE_EQ(w.aircraft(0).speed, 200.0);
}

TEST(World, ExitingAircraftBecomeTerminal) {
  World w(airspace(CaseId::A), SimConfig{}, {active(0, 0, 49.5)}, 0.0);
  w.step(all(w, Action::kHold), 12.0);
  EXPECT_EQ(w.aircraft(0).status, AircraftStatus::kExited);
  EXPECT_DOUBLE_EQ(w.aircraft(0).along_track, 50.0);
  EXPECT_TRUE(w.done());
  const auto r = w.result();
  EXPECT_TRUE(r.complete);
  EXPECT_EQ(episode_score(r), 1);
}

TEST(World, ConflictRemovesBothAircraft) {
  // Both 1 NM before the crossing: after one step they are within 3 NM.
  World w(airspace(CaseId::A), SimConfig{}, {active(0, 0, 24.0), active(1, 1, 24.0),
                                              active(2, 0, 5.0)}, 0.0);
  const auto events = w.step(all(w, Action::kHold), 12.0);
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].pair, std::make_pair(0, 1));
  EXPECT_EQ(w.aircraft(0).status, AircraftStatus::kInConflict);
  EXPECT_EQ(w.aircraft(1).status, AircraftStatus::kInConflict);
  EXPECT_EQ(w.active_ids(), std::vector<AircraftId>{2});
  EXPECT_EQ(compute_reward(w, 0, events, Action::kHold), -1.0);
}

TEST(World, StepRequiresExactlyTheActiveAircraft) {
  World w(airspace(CaseId::A), SimConfig{}, {active(0, 0, 0.0), active(1, 1, 0.0)}, 0.0);
  EXPECT_THROW(w.step({{0, Action::kHold}}, 12.0), ContractViolation);
  EXPECT_THROW(w.step({{0, Action::kHold}, {1, Action::kHold}, {2, Action::kHold}}, 12.0),
               ContractViolation);
  EXPECT_THROW(w.step(all(w, Action::kHold), 0.0), ContractViolation);
}

TEST(World, PendingAircraftSpawnOnSchedule) {
  const std::vector<SpawnEntry> schedule = {{0, 0.0}, {1, 0.0}, {0, 90.0}};
  World w(airspace(CaseId::A), SimConfig{}, schedule);
  EXPECT_EQ(w.active_ids().size(), 2u);
  for (int i = 0; i < 7; ++i) w.step(all(w, Action::kHold), 12.0);
  EXPECT_EQ(w.aircraft(2).status, AircraftStatus::kPending);
  w.step(all(w, Action::kHold), 12.0);  // t = 96
  EXPECT_EQ(w.aircraft(2).status, AircraftStatus::kActive);
  EXPECT_NEAR(w.aircraft(2).along_track, 6.0 * 250.0 * kKnS, 1e-12);
}

TEST(Spawn, ScheduleRespectsIntervals) {
  Rng rng(9);
  const auto s = spawn_schedule({180.0, 360.0}, 10, 3, rng);
  ASSERT_EQ(s.size(), 30u);
  std::map<int, std::vector<double>> per_route;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0) ASSERT_LE(s[i - 1].time, s[i].time);
    per_route[s[i].route_id].push_back(s[i].time);
  }
  for (const auto& [route, times] : per_route) {
    ASSERT_EQ(times.size(), 10u);
    EXPECT_EQ(times[0], 0.0);
    for (std::size_t i = 1; i < times.size(); ++i) {
      EXPECT_GE(times[i] - times[i - 1], 180.0);
      EXPECT_LE(times[i] - times[i - 1], 360.0);
    }
  }
}

TEST(Score, ConflictedAircraftCountOnce) {
  EpisodeResult r;
  r.spawned = 10;
  r.complete = true;
  r.conflicts = {{12.0, {1, 2}, 1.0}, {12.0, {2, 3}, 2.0}};
  EXPECT_EQ(episode_score(r), 7);
  r.complete = false;
  EXPECT_THROW(episode_score(r), ContractViolation);
}

TEST(Observation, LoneAircraftIsPadded) {
  World w(airspace(CaseId::A), SimConfig{}, {active(0, 0, 10.0)}, 0.0);
  const auto s = observe(w, 0);
  ASSERT_EQ(s.size(), SimConfig{}.observation_size());
  EXPECT_NEAR(s[0], 0.2, 1e-12);
  EXPECT_NEAR(s[1], 0.5, 1e-12);
  EXPECT_NEAR(s[2], 15.0 / 40.0, 1e-12);
  for (std::size_t i = 3; i < s.size(); ++i) EXPECT_EQ(s[i], 1.0);
}

TEST(Observation, CrossingNeighbourFeatures) {
  World w(airspace(CaseId::A), SimConfig{}, {active(0, 0, 15.0), active(1, 1, 19.0, 300.0)}, 0.0);
  const auto s = observe(w, 0);
  // own at (15,25), neighbour at (25,19)
  EXPECT_NEAR(s[3], std::hypot(10.0, 6.0) / 40.0, 1e-12);
  EXPECT_NEAR(s[4], 1.0, 1e-12);
  EXPECT_NEAR(s[5], 6.0 / 40.0, 1e-12);  // neighbour distance to the crossing
  EXPECT_EQ(s[6], 1.0);
}

TEST(Observation, AlwaysInUnitBox) {
  const auto a = airspace(CaseId::D);
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<AircraftState> ac;
    for (int i = 0; i < 12; ++i) {
      const int route = static_cast<int>(rng.uniform_index(a->routes.size()));
      ac.push_back(active(i, route, rng.uniform(0, a->route(route).length()), rng.uniform(200, 300)));
    }
    World w(a, SimConfig{}, ac, 0.0);
    for (auto id : w.active_ids()) ASSERT_TRUE(observe(w, id).in_unit_box());
  }
}

TEST(Reward, ShapingTerms) {
  SimConfig cfg;
  World w(airspace(CaseId::A), cfg, {active(0, 0, 10.0), active(1, 0, 5.0)}, 0.0);
  // 5 NM apart on the same route: half the warning radius.
  EXPECT_NEAR(compute_reward(w, 0, {}, Action::kHold), -cfg.alpha * 0.5, 1e-12);
  EXPECT_NEAR(compute_reward(w, 0, {}, Action::kAccelerate), -cfg.alpha * 0.5 - cfg.beta, 1e-12);

  World alone(airspace(CaseId::A), cfg, {active(0, 0, 10.0)}, 0.0);
  EXPECT_EQ(compute_reward(alone, 0, {}, Action::kHold), 0.0);
  EXPECT_NEAR(compute_reward(alone, 0, {}, Action::kDecelerate), -cfg.beta, 1e-12);
}

TEST(SimConfig, ValidationRejectsBadValues) {
  SimConfig c;
  c.v_min_kn = 400;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SimConfig{};
  c.dt_s = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
