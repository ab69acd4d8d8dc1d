#include "mdp/scenario_gen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mdp/kinematics.hpp"

namespace mdp {

ScenarioKind parse_scenario_kind(std::string_view name) {
  if (name == "straight") return ScenarioKind::straight;
  if (name == "lead_vehicle") return ScenarioKind::lead_vehicle;
  if (name == "lane_change") return ScenarioKind::lane_change;
  if (name == "mixed") return ScenarioKind::mixed;
  throw std::invalid_argument("unknown scenario kind: " + std::string(name));
}

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::straight: return "straight";
    case ScenarioKind::lead_vehicle: return "lead_vehicle";
    case ScenarioKind::lane_change: return "lane_change";
    case ScenarioKind::mixed: return "mixed";
  }
  return "mixed";
}

double idm_acceleration(const IdmParams& p, double v, std::optional<LeaderGap> leader) {
  double a = p.a_max * (1.0 - std::pow(v / p.v0, p.delta));
  if (leader) {
    const double dv = v - leader->speed;
    const double s_star =
        std::max(0.0, p.s0 + v * p.headway + v * dv / (2.0 * std::sqrt(p.a_max * p.b)));
    const double gap = std::max(leader->gap, 0.1);
    a -= p.a_max * (s_star / gap) * (s_star / gap);
  }
  return a;
}

double pure_pursuit_curvature(double d, double psi, double d_target, double lookahead) {
  const double lat = d_target - d;
  const double dx = lookahead * std::cos(psi) + lat * std::sin(psi);
  const double dy = -lookahead * std::sin(psi) + lat * std::cos(psi);
  const double alpha = std::atan2(dy, dx);
  const double ld = std::hypot(lookahead, lat);
  return std::clamp(2.0 * std::sin(alpha) / ld, -0.2, 0.2);
}

namespace {

constexpr double kSimDt = 0.05;
constexpr int kSubsteps = 5;  // kStepDt / kSimDt
constexpr double kLateralOverlap = 2.5;
constexpr double kLaneChangeDuration = 4.0;
constexpr double kLeaderJerk = 3.0;
constexpr double kDriftFraction = 0.5;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Vehicle {
  double s = 0.0;
  double d = 0.0;
  double psi = 0.0;
  double v = 0.0;
  IdmParams idm;
  bool ego = false;

  // Scripted leader (lead_vehicle kind); otherwise IDM.
  bool scripted = false;
  double brake_start = 0.0;
  double brake_decel = 0.0;
  double min_speed = 0.0;
  double accel = 0.0;

  // Lane change (ego only).
  double lane_from = 0.0;
  double lane_to = 0.0;
  double change_start = 1e9;

  // Ego tracking error: aims `drift` off its lane until `drift_end`.
  double drift = 0.0;
  double drift_end = -1e9;
};

double smoothstep5(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

double target_offset(const Vehicle& v, double t) {
  const double drift = t < v.drift_end ? v.drift : 0.0;
  if (v.lane_from == v.lane_to) return v.lane_to + drift;
  return v.lane_from + drift +
         (v.lane_to - v.lane_from) * smoothstep5((t - v.change_start) / kLaneChangeDuration);
}

std::optional<LeaderGap> find_leader(const std::vector<Vehicle>& cars, std::size_t i) {
  std::optional<LeaderGap> best;
  for (std::size_t j = 0; j < cars.size(); ++j) {
    if (j == i) continue;
    if (cars[j].s <= cars[i].s) continue;
    if (std::abs(cars[j].d - cars[i].d) >= kLateralOverlap) continue;
    const double gap = cars[j].s - cars[i].s - kVehicleLength;
    if (!best || gap < best->gap) best = LeaderGap{gap, cars[j].v};
  }
  return best;
}

struct Road {
  double ox = 0.0;
  double oy = 0.0;
  double heading = 0.0;
  std::vector<double> lane_offsets;

  Point2 world(double s, double d) const {
    const double c = std::cos(heading);
    const double sn = std::sin(heading);
    return {ox + s * c - d * sn, oy + s * sn + d * c};
  }
  Polyline lane(double d, double s0, double s1) const {
    Polyline out;
    for (double s = s0; s <= s1 + 1e-9; s += 5.0) out.push_back(world(s, d));
    return out;
  }
};

AgentState world_state(const Road& road, const Vehicle& v) {
  const Point2 p = road.world(v.s, v.d);
  return {p.x, p.y, wrap_angle(road.heading + v.psi), v.v};
}

struct Draw {
  std::mt19937_64 rng;
  explicit Draw(std::uint64_t seed) : rng(seed) {}
  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
  int integer(int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); }
};

bool feasible(const FutureStates& fut, const std::vector<Vehicle>& cars,
              const std::vector<std::vector<Vehicle>>& snapshots, const Road& road) {
  for (const auto& track : fut) {
    const auto prof = kinematics(positions(track), kStepDt);
    for (double a : prof.accels)
      if (a > 4.0) return false;
    for (double j : prof.jerks)
      if (j > 10.0) return false;
  }
  const double lo = *std::min_element(road.lane_offsets.begin(), road.lane_offsets.end());
  const double hi = *std::max_element(road.lane_offsets.begin(), road.lane_offsets.end());
  IdmParams ref;
  for (const auto& snap : snapshots) {
    for (std::size_t i = 0; i < snap.size(); ++i) {
      if (snap[i].d < lo - kLaneWidth / 2 || snap[i].d > hi + kLaneWidth / 2) return false;
      if (auto lead = find_leader(snap, i); lead && lead->gap < ref.s0) return false;
    }
  }
  (void)cars;
  return true;
}

std::optional<Scenario> try_generate(Draw& draw, ScenarioKind kind, const std::string& id, double max_pre_roll) {
  Road road;
  road.heading = draw.uniform(-std::numbers::pi, std::numbers::pi);
  road.ox = draw.uniform(-500.0, 500.0);
  road.oy = draw.uniform(-500.0, 500.0);
  const int n_lanes = draw.integer(2, 3);
  if (n_lanes == 2)
    road.lane_offsets = draw.integer(0, 1) ? std::vector<double>{0.0, kLaneWidth} : std::vector<double>{-kLaneWidth, 0.0};
  else
    road.lane_offsets = {-kLaneWidth, 0.0, kLaneWidth};

  const double t0 = -(kHistoryLen - 1) * kStepDt;
  std::vector<Vehicle> cars;
  Vehicle ego;
  ego.ego = true;
  ego.v = kind == ScenarioKind::lead_vehicle ? draw.uniform(6.0, 13.0) : draw.uniform(4.0, 13.0);
  if (draw.uniform(0.0, 1.0) < kDriftFraction) {
    ego.d = draw.uniform(-0.5, 0.5);
    ego.drift = draw.uniform(-1.2, 1.2);
    ego.drift_end = draw.uniform(-1.0, 0.5);
  }
  cars.push_back(ego);

  if (kind == ScenarioKind::lead_vehicle) {
    Vehicle lead;
    lead.scripted = true;
    lead.v = draw.uniform(3.0, 11.0);
    const double desired = IdmParams{}.s0 + cars[0].v * IdmParams{}.headway;
    lead.s = kVehicleLength + draw.uniform(std::max(8.0, 0.8 * desired), 40.0);
    lead.brake_start = draw.uniform(0.0, 1.0) < 0.3 ? 1e9 : draw.uniform(-1.0, 3.0);
    lead.brake_decel = draw.uniform(0.5, 2.0);
    lead.min_speed = draw.uniform(0.0, 6.0);
    cars.push_back(lead);
  }
  if (kind == ScenarioKind::lane_change) {
    std::vector<double> targets;
    for (double off : road.lane_offsets)
      if (off != 0.0) targets.push_back(off);
    cars[0].lane_to = targets[static_cast<std::size_t>(draw.integer(0, static_cast<int>(targets.size()) - 1))];
    cars[0].change_start = draw.uniform(-1.5, 1.0);
  }

  // Neighbours in the other lanes.
  const int n_others = draw.integer(0, kind == ScenarioKind::straight ? 5 : 4);
  for (int k = 0; k < n_others && static_cast<int>(cars.size()) < kMaxAgents; ++k) {
    std::vector<double> lanes;
    for (double off : road.lane_offsets)
      if (off != 0.0) lanes.push_back(off);
    const double d = lanes[static_cast<std::size_t>(draw.integer(0, static_cast<int>(lanes.size()) - 1))];
    double s = draw.uniform(-50.0, 90.0);
    if (kind == ScenarioKind::lane_change && d == cars[0].lane_to && s > -30.0 && s < 35.0)
      s = s < 0.0 ? s - 30.0 : s + 35.0;
    bool clash = false;
    for (const auto& c : cars)
      if (std::abs(c.d - d) < 1.0 && std::abs(c.s - s) < 15.0) clash = true;
    if (clash) continue;
    Vehicle nb;
    nb.s = s;
    nb.d = d;
    nb.lane_from = nb.lane_to = d;
    nb.idm.v0 = draw.uniform(9.0, 14.0);
    nb.v = std::min(draw.uniform(6.0, 14.0), nb.idm.v0 + 1.0);
    cars.push_back(nb);
  }

  std::vector<OrientedBox> statics;
  const double lo = *std::min_element(road.lane_offsets.begin(), road.lane_offsets.end());
  const int n_static = draw.integer(0, 3);
  for (int k = 0; k < n_static; ++k) {
    const double s = draw.uniform(-20.0, 150.0);
    const Point2 p = road.world(s, lo - kLaneWidth / 2 - 2.0);
    statics.push_back({p.x, p.y, wrap_angle(road.heading), kVehicleLength, kVehicleWidth});
  }

  // Simulate from the start of the lead-in to the end of the horizon.
  const int pre = max_pre_roll > 0.0 ? static_cast<int>(draw.uniform(0.0, max_pre_roll) / kStepDt) : 0;
  const int total_steps = pre + (kHistoryLen - 1) + kFutureSteps;
  std::vector<std::vector<AgentState>> states(cars.size());
  std::vector<std::vector<Vehicle>> snapshots;
  auto record = [&] {
    for (std::size_t i = 0; i < cars.size(); ++i) states[i].push_back(world_state(road, cars[i]));
    snapshots.push_back(cars);
  };
  record();
  double t = t0 - pre * kStepDt;
  for (int step = 0; step < total_steps; ++step) {
    for (int sub = 0; sub < kSubsteps; ++sub) {
      std::vector<double> acc(cars.size());
      std::vector<double> curv(cars.size(), 0.0);
      for (std::size_t i = 0; i < cars.size(); ++i) {
        const Vehicle& c = cars[i];
        if (c.scripted) {
          const bool braking = t >= c.brake_start && c.v > c.min_speed;
          const double target = braking ? -c.brake_decel : 0.0;
          const double max_delta = kLeaderJerk * kSimDt;
          acc[i] = c.accel + std::clamp(target - c.accel, -max_delta, max_delta);
        } else {
          acc[i] = idm_acceleration(c.idm, c.v, find_leader(cars, i));
        }
        if (c.ego)
          curv[i] = pure_pursuit_curvature(c.d, c.psi, target_offset(c, t), kPurePursuitLookahead);
      }
      for (std::size_t i = 0; i < cars.size(); ++i) {
        Vehicle& c = cars[i];
        c.accel = acc[i];
        c.v = std::max(0.0, c.v + acc[i] * kSimDt);
        if (c.scripted && c.v == 0.0) c.accel = 0.0;
        c.psi += c.v * curv[i] * kSimDt;
        c.s += c.v * std::cos(c.psi) * kSimDt;
        c.d += c.v * std::sin(c.psi) * kSimDt;
      }
      t += kSimDt;
    }
    record();
  }
  for (auto& track : states) track.erase(track.begin(), track.begin() + pre);
  snapshots.erase(snapshots.begin(), snapshots.begin() + pre);

  Scenario sc;
  sc.id = id;
  for (double off : road.lane_offsets) sc.lanes.push_back(road.lane(off, -100.0, 500.0));
  sc.route = road.lane(cars[0].lane_to, -20.0, 500.0);
  sc.static_objects = statics;
  FutureStates fut(cars.size());
  for (std::size_t i = 0; i < cars.size(); ++i) {
    std::vector<AgentState> hist(states[i].begin(), states[i].begin() + kHistoryLen);
    fut[i].assign(states[i].begin() + (kHistoryLen - 1), states[i].end());
    if (i == 0)
      sc.ego_history = std::move(hist);
    else
      sc.agents.push_back({std::move(hist)});
  }
  std::vector<std::vector<Vehicle>> future_snaps(snapshots.begin() + (kHistoryLen - 1),
                                                 snapshots.end());
  if (!feasible(fut, cars, future_snaps, road)) return std::nullopt;
  sc.expert_future = std::move(fut);
  return sc;
}

}  // namespace

std::vector<Scenario> generate_scenarios(std::uint64_t seed, int n, ScenarioKind kind, double max_pre_roll) {
  if (n < 1) throw std::invalid_argument("generate_scenarios: n must be >= 1");
  if (max_pre_roll < 0.0) throw std::invalid_argument("generate_scenarios: max_pre_roll must be >= 0");
  std::vector<Scenario> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Draw draw(splitmix64(seed * 0x100000001b3ULL + static_cast<std::uint64_t>(i)));
    ScenarioKind k = kind;
    if (kind == ScenarioKind::mixed) k = static_cast<ScenarioKind>(draw.integer(0, 2));
    const std::string id = to_string(k) + "-" + std::to_string(seed) + "-" + std::to_string(i);
    std::optional<Scenario> sc;
    for (int attempt = 0; attempt < 200 && !sc; ++attempt) sc = try_generate(draw, k, id, max_pre_roll);
    if (!sc) throw std::runtime_error("scenario generation failed to find a feasible expert");
    out.push_back(std::move(*sc));
  }
  return out;
}

}  // namespace mdp
