#include "doda/sim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "doda/errors.hpp"

namespace doda::sim {

extern const char* const kDefaultGeometryText;

namespace {

constexpr double kKnotsToNmPerSecond = 1.0 / 3600.0;
constexpr double kGeomEps = 1e-9;

double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
Point sub(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

CaseId parse_case(std::string_view text) {
  if (text.size() == 1) {
    switch (std::toupper(static_cast<unsigned char>(text[0]))) {
      case 'A': return CaseId::A;
      case 'B': return CaseId::B;
      case 'C': return CaseId::C;
      case 'D': return CaseId::D;
      default: break;
    }
  }
  throw ConfigError("unknown case id '" + std::string(text) + "'");
}

char to_char(CaseId id) { return static_cast<char>(id); }

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

// ---------------------------------------------------------------------------
// Route

Route::Route(int id, std::vector<Point> waypoints)
    : id_(id), waypoints_(std::move(waypoints)) {
  if (waypoints_.size() < 2) {
    throw ConfigError("route " + std::to_string(id) + " needs at least two waypoints");
  }
  cumulative_.reserve(waypoints_.size());
  cumulative_.push_back(0.0);
  for (std::size_t i = 1; i < waypoints_.size(); ++i) {
    const double seg = distance(waypoints_[i - 1], waypoints_[i]);
    if (seg <= kGeomEps) {
      throw ConfigError("route " + std::to_string(id) + " repeats a waypoint");
    }
    cumulative_.push_back(cumulative_.back() + seg);
  }
}

Point Route::point_at(double along) const {
  along = std::clamp(along, 0.0, length());
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), along);
  std::size_t seg = it == cumulative_.begin()
                        ? 0
                        : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  if (seg >= waypoints_.size() - 1) seg = waypoints_.size() - 2;
  const double seg_len = cumulative_[seg + 1] - cumulative_[seg];
  const double t = (along - cumulative_[seg]) / seg_len;
  const Point a = waypoints_[seg];
  const Point b = waypoints_[seg + 1];
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

double Route::along_of(std::size_t segment, Point p) const {
  const Point a = waypoints_[segment];
  const Point b = waypoints_[segment + 1];
  const Point ab = sub(b, a);
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2;
  t = std::clamp(t, 0.0, 1.0);
  return cumulative_[segment] + t * std::sqrt(len2);
}

double Route::distance_to(Point p) const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s + 1 < waypoints_.size(); ++s) {
    best = std::min(best, distance(p, point_at(along_of(s, p))));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Geometry table

GeometryTable parse_geometry(std::istream& in) {
  GeometryTable table;
  std::map<CaseId, std::map<int, std::vector<Point>>> rows;
  std::string line;
  int line_no = 0;
  bool have_version = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string head;
    if (!(ss >> head)) continue;
    if (head == "version") {
      if (!(ss >> table.version)) {
        throw ConfigError("geometry line " + std::to_string(line_no) + ": bad version");
      }
      have_version = true;
      continue;
    }
    int route = 0;
    Point p;
    if (!(ss >> route >> p.x >> p.y) || route < 0) {
      throw ConfigError("geometry line " + std::to_string(line_no) +
                        ": expected '<case> <route> <x> <y>'");
    }
    rows[parse_case(head)][route].push_back(p);
  }
  if (!have_version) throw ConfigError("geometry table has no version line");
  for (auto& [case_id, routes] : rows) {
    auto& out = table.cases[case_id];
    int expected = 0;
    for (auto& [route_id, points] : routes) {
      if (route_id != expected++) {
        throw ConfigError(std::string("geometry case ") + to_char(case_id) +
                          ": route ids must be contiguous from 0");
      }
      out.push_back(std::move(points));
    }
  }
  return table;
}

GeometryTable load_geometry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open geometry file " + path);
  return parse_geometry(in);
}

const GeometryTable& default_geometry() {
  static const GeometryTable table = [] {
    std::istringstream in(kDefaultGeometryText);
    return parse_geometry(in);
  }();
  return table;
}

// ---------------------------------------------------------------------------
// Intersections

namespace {

struct Candidate {
  double along_a;
  double along_b;
  Point point;
};

// Collects crossing points and collinear overlaps between two routes.
void intersect_routes(const Route& ra, const Route& rb, std::vector<Intersection>& out) {
  std::vector<Candidate> points;
  bool merged = false;
  Candidate merge{std::numeric_limits<double>::infinity(), 0.0, {}};
  double merge_end_a = 0.0;

  const auto& wa = ra.waypoints();
  const auto& wb = rb.waypoints();
  for (std::size_t i = 0; i + 1 < wa.size(); ++i) {
    const Point p = wa[i];
    const Point r = sub(wa[i + 1], p);
    for (std::size_t j = 0; j + 1 < wb.size(); ++j) {
      const Point q = wb[j];
      const Point s = sub(wb[j + 1], q);
      const double denom = cross(r, s);
      const Point qp = sub(q, p);
      const double scale = std::hypot(r.x, r.y) * std::hypot(s.x, s.y);
      if (std::abs(denom) > 1e-12 * scale) {
        const double t = cross(qp, s) / denom;
        const double u = cross(qp, r) / denom;
        if (t < -kGeomEps || t > 1 + kGeomEps || u < -kGeomEps || u > 1 + kGeomEps) continue;
        const Point x{p.x + t * r.x, p.y + t * r.y};
        points.push_back({ra.along_of(i, x), rb.along_of(j, x), x});
        continue;
      }
      // Parallel: only collinear overlaps matter.
      if (std::abs(cross(qp, r)) > 1e-9 * std::hypot(r.x, r.y)) continue;
      const double rr = r.x * r.x + r.y * r.y;
      double t0 = (qp.x * r.x + qp.y * r.y) / rr;
      double t1 = t0 + (s.x * r.x + s.y * r.y) / rr;
      if (t0 > t1) std::swap(t0, t1);
      const double lo = std::max(0.0, t0);
      const double hi = std::min(1.0, t1);
      if (hi - lo <= kGeomEps) continue;
      const Point start{p.x + lo * r.x, p.y + lo * r.y};
      const Point end{p.x + hi * r.x, p.y + hi * r.y};
      const double start_a = ra.along_of(i, start);
      merged = true;
      merge_end_a = std::max(merge_end_a, ra.along_of(i, end));
      if (start_a < merge.along_a) merge = {start_a, rb.along_of(j, start), start};
    }
  }

  if (merged) {
    out.push_back({ra.id(), rb.id(), merge.along_a, merge.along_b, merge.point,
                   IntersectionKind::kMerge});
  }
  std::sort(points.begin(), points.end(),
            [](const Candidate& x, const Candidate& y) { return x.along_a < y.along_a; });
  std::vector<Candidate> unique;
  for (const auto& c : points) {
    if (merged && c.along_a >= merge.along_a - 1e-6 && c.along_a <= merge_end_a + 1e-6) {
      continue;
    }
    if (!unique.empty() && distance(unique.back().point, c.point) < 1e-6) continue;
    unique.push_back(c);
  }
  for (const auto& c : unique) {
    out.push_back({ra.id(), rb.id(), c.along_a, c.along_b, c.point,
                   IntersectionKind::kCrossing});
  }
}

}  // namespace

Airspace build_case(CaseId id, const GeometryTable& table) {
  auto it = table.cases.find(id);
  if (it == table.cases.end()) {
    throw ConfigError(std::string("geometry table has no case ") + to_char(id));
  }
  Airspace airspace;
  airspace.case_id = id;
  int route_id = 0;
  for (const auto& waypoints : it->second) airspace.routes.emplace_back(route_id++, waypoints);
  if (airspace.routes.size() < 2) {
    throw ConfigError(std::string("case ") + to_char(id) + " needs at least two routes");
  }
  for (std::size_t a = 0; a < airspace.routes.size(); ++a) {
    for (std::size_t b = a + 1; b < airspace.routes.size(); ++b) {
      intersect_routes(airspace.routes[a], airspace.routes[b], airspace.intersections);
    }
  }
  for (const auto& x : airspace.intersections) {
    if (airspace.route(x.route_a).distance_to(x.point) > 1e-6 ||
        airspace.route(x.route_b).distance_to(x.point) > 1e-6) {
      throw ContractViolation("intersection point off its routes");
    }
  }
  return airspace;
}

// ---------------------------------------------------------------------------
// Configuration and spawning

void SimConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("sim config: ") + what);
  };
  require(separation_nm > 0, "separation_nm must be positive");
  require(v_min_kn > 0 && v_min_kn < v_max_kn, "need 0 < v_min < v_max");
  require(v_init_kn >= v_min_kn && v_init_kn <= v_max_kn, "v_init outside speed bounds");
  require(dv_kn > 0, "dv_kn must be positive");
  require(accel_kn_per_s > 0, "accel_kn_per_s must be positive");
  require(dt_s > 0, "dt_s must be positive");
  require(neighbors >= 0, "neighbors must be nonnegative");
  require(obs_range_nm > 0, "obs_range_nm must be positive");
  require(warning_radius_nm > 0, "warning_radius_nm must be positive");
  require(alpha >= 0 && beta >= 0, "reward coefficients must be nonnegative");
  require(aircraft_per_route >= 1, "aircraft_per_route must be at least 1");
  require(interval_min_s > 0 && interval_min_s <= interval_max_s,
          "need 0 < interval_min_s <= interval_max_s");
  require(max_steps > 0, "max_steps must be positive");
}

std::vector<SpawnEntry> spawn_schedule(std::pair<double, double> interval_s,
                                       int per_route_count, int num_routes, Rng& rng) {
  const auto [lo, hi] = interval_s;
  if (!(lo > 0 && lo <= hi)) throw ContractViolation("spawn_schedule: need 0 < min <= max");
  if (per_route_count < 1) throw ContractViolation("spawn_schedule: per_route_count < 1");
  std::vector<SpawnEntry> schedule;
  schedule.reserve(static_cast<std::size_t>(per_route_count * num_routes));
  for (int r = 0; r < num_routes; ++r) {
    double t = 0.0;
    schedule.push_back({r, t});
    for (int k = 1; k < per_route_count; ++k) {
      t += rng.uniform(lo, hi);
      schedule.push_back({r, t});
    }
  }
  std::stable_sort(schedule.begin(), schedule.end(), [](const SpawnEntry& a, const SpawnEntry& b) {
    return a.time < b.time || (a.time == b.time && a.route_id < b.route_id);
  });
  return schedule;
}

// ---------------------------------------------------------------------------
// Conflict detection

std::vector<ConflictEvent> detect_conflicts(std::span<const Traffic> traffic,
                                            double separation_nm, double time) {
  std::vector<ConflictEvent> events;
  if (traffic.size() < 2) return events;

  auto cell_of = [separation_nm](double v) {
    return static_cast<std::int64_t>(std::floor(v / separation_nm));
  };
  // Exact packing; a mixing hash here can alias two neighbouring cells and
  // report a pair twice.
  auto key = [](std::int64_t cx, std::int64_t cy) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cx)) << 32) |
           static_cast<std::uint32_t>(cy);
  };
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> grid;
  grid.reserve(traffic.size() * 2);
  for (std::size_t i = 0; i < traffic.size(); ++i) {
    grid[key(cell_of(traffic[i].position.x), cell_of(traffic[i].position.y))].push_back(i);
  }
  for (std::size_t i = 0; i < traffic.size(); ++i) {
    const auto cx = cell_of(traffic[i].position.x);
    const auto cy = cell_of(traffic[i].position.y);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        auto it = grid.find(key(cx + dx, cy + dy));
        if (it == grid.end()) continue;
        for (std::size_t j : it->second) {
          if (traffic[j].id <= traffic[i].id) continue;
          const double d = distance(traffic[i].position, traffic[j].position);
          if (d < separation_nm) events.push_back({time, {traffic[i].id, traffic[j].id}, d});
        }
      }
    }
  }
  std::sort(events.begin(), events.end(),
            [](const ConflictEvent& a, const ConflictEvent& b) { return a.pair < b.pair; });
  return events;
}

// ---------------------------------------------------------------------------
// World

World::World(std::shared_ptr<const Airspace> airspace, SimConfig config,
             std::span<const SpawnEntry> schedule)
    : airspace_(std::move(airspace)), config_(config) {
  config_.validate();
  aircraft_.reserve(schedule.size());
  for (const auto& entry : schedule) {
    if (entry.route_id < 0 || static_cast<std::size_t>(entry.route_id) >= airspace_->routes.size()) {
      throw ConfigError("spawn entry references unknown route");
    }
    AircraftState a;
    a.id = static_cast<AircraftId>(aircraft_.size());
    a.route_id = entry.route_id;
    a.spawn_time = entry.time;
    a.speed = a.speed_cmd = config_.v_init_kn;
    aircraft_.push_back(a);
  }
  activate_pending();
}

World::World(std::shared_ptr<const Airspace> airspace, SimConfig config,
             std::vector<AircraftState> aircraft, double time)
    : airspace_(std::move(airspace)), config_(config), aircraft_(std::move(aircraft)), time_(time) {
  config_.validate();
  for (std::size_t i = 0; i < aircraft_.size(); ++i) {
    if (aircraft_[i].id != static_cast<AircraftId>(i)) {
      throw ContractViolation("aircraft ids must equal their index");
    }
  }
}

const AircraftState& World::aircraft(AircraftId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= aircraft_.size()) {
    throw ContractViolation("unknown aircraft id " + std::to_string(id));
  }
  return aircraft_[static_cast<std::size_t>(id)];
}

std::vector<AircraftId> World::active_ids() const {
  std::vector<AircraftId> ids;
  for (const auto& a : aircraft_) {
    if (a.status == AircraftStatus::kActive) ids.push_back(a.id);
  }
  return ids;
}

Point World::position(const AircraftState& a) const {
  return airspace_->route(a.route_id).point_at(a.along_track);
}

void World::activate_pending() {
  for (auto& a : aircraft_) {
    if (a.status != AircraftStatus::kPending || a.spawn_time > time_ + 1e-9) continue;
    a.status = AircraftStatus::kActive;
    a.speed = a.speed_cmd = config_.v_init_kn;
    // Place the aircraft where it would be had it entered exactly on schedule.
    a.along_track = std::max(0.0, time_ - a.spawn_time) * a.speed * kKnotsToNmPerSecond;
  }
}

void World::advance(AircraftState& a, double dt) const {
  const double dv = a.speed_cmd - a.speed;
  const double accel = config_.accel_kn_per_s;
  double travelled_kn_s;  // knot-seconds
  if (dv == 0.0) {
    travelled_kn_s = a.speed * dt;
  } else if (std::abs(dv) <= accel * dt) {
    const double t_reach = std::abs(dv) / accel;
    travelled_kn_s = 0.5 * (a.speed + a.speed_cmd) * t_reach + a.speed_cmd * (dt - t_reach);
    a.speed = a.speed_cmd;
  } else {
    const double v_end = a.speed + std::copysign(accel * dt, dv);
    travelled_kn_s = 0.5 * (a.speed + v_end) * dt;
    a.speed = v_end;
  }
  a.along_track += travelled_kn_s * kKnotsToNmPerSecond;
}

std::vector<ConflictEvent> World::step(const JointActions& actions, double dt) {
  if (!(dt > 0)) throw ContractViolation("step: dt must be positive");
  std::size_t active = 0;
  for (const auto& a : aircraft_) active += a.status == AircraftStatus::kActive;
  for (const auto& [id, action] : actions) {
    if (aircraft(id).status != AircraftStatus::kActive) {
      throw ContractViolation("step: action for inactive aircraft " + std::to_string(id));
    }
  }
  if (actions.size() != active) {
    throw ContractViolation("step: every active aircraft needs exactly one action");
  }

  for (const auto& [id, action] : actions) {
    auto& a = aircraft_[static_cast<std::size_t>(id)];
    switch (action) {
      case Action::kDecelerate: a.speed_cmd -= config_.dv_kn; break;
      case Action::kAccelerate: a.speed_cmd += config_.dv_kn; break;
      case Action::kHold: break;
    }
    a.speed_cmd = std::clamp(a.speed_cmd, config_.v_min_kn, config_.v_max_kn);
    advance(a, dt);
    const double length = airspace_->route(a.route_id).length();
    if (a.along_track >= length) {
      a.along_track = length;
      a.status = AircraftStatus::kExited;
    }
  }

  time_ += dt;
  ++steps_;
  activate_pending();

  std::vector<Traffic> traffic;
  for (const auto& a : aircraft_) {
    if (a.status == AircraftStatus::kActive) traffic.push_back({a.id, position(a)});
  }
  auto events = detect_conflicts(traffic, config_.separation_nm, time_);
  for (const auto& e : events) {
    aircraft_[static_cast<std::size_t>(e.pair.first)].status = AircraftStatus::kInConflict;
    aircraft_[static_cast<std::size_t>(e.pair.second)].status = AircraftStatus::kInConflict;
  }
  conflicts_.insert(conflicts_.end(), events.begin(), events.end());
  return events;
}

bool World::done() const {
  if (steps_ >= config_.max_steps) return true;
  return std::all_of(aircraft_.begin(), aircraft_.end(), [](const AircraftState& a) {
    return a.status == AircraftStatus::kExited || a.status == AircraftStatus::kInConflict;
  });
}

EpisodeResult World::result() const {
  EpisodeResult r;
  r.conflicts = conflicts_;
  r.steps = steps_;
  r.complete = true;
  for (const auto& a : aircraft_) {
    if (a.status != AircraftStatus::kPending) ++r.spawned;
    if (a.status == AircraftStatus::kExited) ++r.score;
    if (a.status == AircraftStatus::kPending || a.status == AircraftStatus::kActive) {
      r.complete = false;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Observation and reward

namespace {

constexpr double kNoSharedPoint = std::numeric_limits<double>::infinity();

// Distance the neighbour still has to fly to the point it shares with the
// ownship. Co-route traffic (same route, or routes that merge) is compared in
// the merged frame: the result is how far the neighbour trails the ownship,
// and "no shared point" when it is ahead.
double shared_point_distance(const Airspace& airspace, const AircraftState& own,
                             const AircraftState& nb) {
  if (own.route_id == nb.route_id) {
    const double gap = own.along_track - nb.along_track;
    return gap >= 0 ? gap : kNoSharedPoint;
  }
  double best_own = kNoSharedPoint;
  double result = kNoSharedPoint;
  for (const auto& x : airspace.intersections) {
    double s_own, s_nb;
    if (x.route_a == own.route_id && x.route_b == nb.route_id) {
      s_own = x.along_a;
      s_nb = x.along_b;
    } else if (x.route_b == own.route_id && x.route_a == nb.route_id) {
      s_own = x.along_b;
      s_nb = x.along_a;
    } else {
      continue;
    }
    if (x.kind == IntersectionKind::kMerge) {
      const double gap = (own.along_track - s_own) - (nb.along_track - s_nb);
      return gap >= 0 ? gap : kNoSharedPoint;
    }
    if (own.along_track < s_own && nb.along_track < s_nb && s_own - own.along_track < best_own) {
      best_own = s_own - own.along_track;
      result = s_nb - nb.along_track;
    }
  }
  return result;
}

double next_intersection_distance(const Airspace& airspace, const AircraftState& own) {
  double best = kNoSharedPoint;
  for (const auto& x : airspace.intersections) {
    double s;
    if (x.route_a == own.route_id) {
      s = x.along_a;
    } else if (x.route_b == own.route_id) {
      s = x.along_b;
    } else {
      continue;
    }
    if (s > own.along_track) best = std::min(best, s - own.along_track);
  }
  return best;
}

}  // namespace

StateVector observe(const World& world, AircraftId id) {
  const auto& own = world.aircraft(id);
  if (own.status != AircraftStatus::kActive) {
    throw ContractViolation("observe: aircraft " + std::to_string(id) + " is not active");
  }
  const auto& cfg = world.config();
  const auto& airspace = world.airspace();
  const double range = cfg.obs_range_nm;
  auto norm_speed = [&cfg](double v) {
    return clamp01((v - cfg.v_min_kn) / (cfg.v_max_kn - cfg.v_min_kn));
  };
  auto norm_dist = [range](double d) { return std::isfinite(d) ? clamp01(d / range) : 1.0; };

  std::vector<double> values;
  values.reserve(cfg.observation_size());
  values.push_back(clamp01(own.along_track / airspace.route(own.route_id).length()));
  values.push_back(norm_speed(own.speed));
  values.push_back(norm_dist(next_intersection_distance(airspace, own)));

  const Point p = world.position(own);
  std::vector<std::pair<double, AircraftId>> others;
  for (const auto& a : world.aircraft()) {
    if (a.id == id || a.status != AircraftStatus::kActive) continue;
    others.emplace_back(distance(p, world.position(a)), a.id);
  }
  const auto k = std::min(others.size(), static_cast<std::size_t>(cfg.neighbors));
  std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k), others.end());
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.neighbors); ++i) {
    if (i < k) {
      const auto& nb = world.aircraft(others[i].second);
      values.push_back(norm_dist(others[i].first));
      values.push_back(norm_speed(nb.speed));
      values.push_back(norm_dist(shared_point_distance(airspace, own, nb)));
    } else {
      values.insert(values.end(), {1.0, 1.0, 1.0});
    }
  }
  return StateVector(std::move(values));
}

double compute_reward(const World& world, AircraftId id, std::span<const ConflictEvent> events,
                      Action action) {
  for (const auto& e : events) {
    if (e.pair.first == id || e.pair.second == id) return -1.0;
  }
  const auto& cfg = world.config();
  double reward = 0.0;
  const auto& own = world.aircraft(id);
  const Point p = world.position(own);
  double nearest = std::numeric_limits<double>::infinity();
  for (const auto& a : world.aircraft()) {
    if (a.id == id || a.status != AircraftStatus::kActive) continue;
    nearest = std::min(nearest, distance(p, world.position(a)));
  }
  if (nearest < cfg.warning_radius_nm) {
    reward -= cfg.alpha * (cfg.warning_radius_nm - nearest) / cfg.warning_radius_nm;
  }
  if (action != Action::kHold) reward -= cfg.beta;
  return reward;
}

int episode_score(const EpisodeResult& result) {
  if (!result.complete) {
    throw ContractViolation("episode_score: episode has not terminated");
  }
  std::vector<AircraftId> involved;
  for (const auto& e : result.conflicts) {
    involved.push_back(e.pair.first);
    involved.push_back(e.pair.second);
  }
  std::sort(involved.begin(), involved.end());
  involved.erase(std::unique(involved.begin(), involved.end()), involved.end());
  return result.spawned - static_cast<int>(involved.size());
}

}  // namespace doda::sim
