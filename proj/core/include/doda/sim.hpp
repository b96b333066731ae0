#pragma once

// Structured-airspace simulator: fixed routes with crossings and merges,
// speed-controlled aircraft, loss-of-separation detection, observations and
// rewards for the speed-advisory agents.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "doda/rng.hpp"
#include "doda/types.hpp"

namespace doda::sim {

enum class CaseId : char { A = 'A', B = 'B', C = 'C', D = 'D' };

/// Parses "A".."D" (case-insensitive). Throws ConfigError otherwise.
CaseId parse_case(std::string_view text);
char to_char(CaseId id);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(Point a, Point b);

/// A polyline route in nautical miles. Construction enforces at least two
/// waypoints, distinct consecutive waypoints and positive arc length.
class Route {
 public:
  Route(int id, std::vector<Point> waypoints);

  int id() const { return id_; }
  const std::vector<Point>& waypoints() const { return waypoints_; }
  Point entry_point() const { return waypoints_.front(); }
  Point exit_point() const { return waypoints_.back(); }
  double length() const { return cumulative_.back(); }

  /// Position at arc length s, clamped to [0, length].
  Point point_at(double along) const;

  /// Shortest distance from p to the polyline.
  double distance_to(Point p) const;

  /// Arc length of the projection of p onto segment `segment`.
  double along_of(std::size_t segment, Point p) const;

 private:
  int id_;
  std::vector<Point> waypoints_;
  std::vector<double> cumulative_;
};

enum class IntersectionKind { kCrossing, kMerge };

/// A point shared by two routes. For a merge, both routes continue along a
/// common segment beyond `point`.
struct Intersection {
  int route_a = 0;
  int route_b = 0;
  double along_a = 0.0;
  double along_b = 0.0;
  Point point;
  IntersectionKind kind = IntersectionKind::kCrossing;
};

struct Airspace {
  CaseId case_id = CaseId::A;
  std::vector<Route> routes;
  std::vector<Intersection> intersections;

  const Route& route(int id) const { return routes.at(static_cast<std::size_t>(id)); }
};

/// Waypoint table for all cases, read from the versioned geometry file.
struct GeometryTable {
  int version = 0;
  std::map<CaseId, std::vector<std::vector<Point>>> cases;
};

/// Format: '#' comments, a `version <n>` line, then rows `<case> <route> <x> <y>`
/// listing waypoints in order.
GeometryTable parse_geometry(std::istream& in);
GeometryTable load_geometry(const std::string& path);
/// The table shipped in config/geometry.txt, compiled in.
const GeometryTable& default_geometry();

/// Builds routes and computes every crossing/merge point between route pairs.
Airspace build_case(CaseId id, const GeometryTable& table);

struct SimConfig {
  double separation_nm = 3.0;
  double v_min_kn = 200.0;
  double v_max_kn = 300.0;
  double v_init_kn = 250.0;
  double dv_kn = 20.0;
  double accel_kn_per_s = 2.0;
  double dt_s = 12.0;
  int neighbors = 2;
  double obs_range_nm = 40.0;
  double warning_radius_nm = 10.0;
  double alpha = 0.1;
  double beta = 0.01;
  int aircraft_per_route = 10;
  double interval_min_s = 180.0;
  double interval_max_s = 360.0;
  int max_steps = 5000;

  void validate() const;
  std::size_t observation_size() const { return 3 + 3 * static_cast<std::size_t>(neighbors); }
};

using AircraftId = int;

enum class AircraftStatus { kPending, kActive, kExited, kInConflict };

struct AircraftState {
  AircraftId id = 0;
  int route_id = 0;
  double spawn_time = 0.0;
  double along_track = 0.0;
  double speed = 0.0;
  double speed_cmd = 0.0;
  AircraftStatus status = AircraftStatus::kPending;
};

struct ConflictEvent {
  double time = 0.0;
  std::pair<AircraftId, AircraftId> pair;  // first < second
  double separation = 0.0;

  bool operator==(const ConflictEvent&) const = default;
};

struct EpisodeResult {
  int score = 0;
  std::vector<ConflictEvent> conflicts;
  int spawned = 0;
  int steps = 0;
  bool complete = false;  // every aircraft reached a terminal status
};

struct SpawnEntry {
  int route_id = 0;
  double time = 0.0;
};

/// Per route: first aircraft at t=0, then gaps drawn uniformly from
/// [min_s, max_s]. Sorted by (time, route).
std::vector<SpawnEntry> spawn_schedule(std::pair<double, double> interval_s,
                                       int per_route_count, int num_routes, Rng& rng);

struct Traffic {
  AircraftId id = 0;
  Point position;
};

/// All pairs closer than `separation_nm`, ordered by (first, second) id.
/// Uses a uniform grid hash.
std::vector<ConflictEvent> detect_conflicts(std::span<const Traffic> traffic,
                                            double separation_nm, double time);

using JointActions = std::map<AircraftId, Action>;

class World {
 public:
  /// Aircraft with spawn_time <= 0 start active at their route entry.
  World(std::shared_ptr<const Airspace> airspace, SimConfig config,
        std::span<const SpawnEntry> schedule);

  /// Explicit state, for scenario construction. Aircraft ids must equal their
  /// index in `aircraft`.
  World(std::shared_ptr<const Airspace> airspace, SimConfig config,
        std::vector<AircraftState> aircraft, double time);

  /// Advances every active aircraft by dt. `actions` must name exactly the
  /// active aircraft. Returns the conflicts detected after the move; the
  /// aircraft involved become kInConflict.
  std::vector<ConflictEvent> step(const JointActions& actions, double dt);

  const Airspace& airspace() const { return *airspace_; }
  const SimConfig& config() const { return config_; }
  const std::vector<AircraftState>& aircraft() const { return aircraft_; }
  const AircraftState& aircraft(AircraftId id) const;
  std::vector<AircraftId> active_ids() const;
  Point position(const AircraftState& a) const;

  double time() const { return time_; }
  int steps() const { return steps_; }
  bool done() const;
  EpisodeResult result() const;

 private:
  void activate_pending();
  void advance(AircraftState& a, double dt) const;

  std::shared_ptr<const Airspace> airspace_;
  SimConfig config_;
  std::vector<AircraftState> aircraft_;
  std::vector<ConflictEvent> conflicts_;
  double time_ = 0.0;
  int steps_ = 0;
};

/// Observation of an active aircraft: own (along-track fraction, speed,
/// distance to next intersection) followed by, for each of the K nearest
/// active aircraft, (distance, speed, distance to the shared point).
/// Missing neighbours are padded with 1.0.
StateVector observe(const World& world, AircraftId id);

/// Reward for an aircraft that was active during the last step.
double compute_reward(const World& world, AircraftId id,
                      std::span<const ConflictEvent> events, Action action);

/// Aircraft that exited without conflict. Throws ContractViolation if the
/// episode has not terminated.
int episode_score(const EpisodeResult& result);

}  // namespace doda::sim
