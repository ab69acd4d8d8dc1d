#include "mdp/closed_loop.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "mdp/errors.hpp"
#include "mdp/kinematics.hpp"
#include "mdp/strategy.hpp"

namespace mdp {

namespace {

constexpr double kLateralOverlap = 2.5;
constexpr double kLateralTau = 1.5;  // s, lateral settling constant of the reference driver
constexpr double kReplayHorizon = kStepDt * kFutureSteps;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

AgentState extrapolate(const AgentState& s, double t) {
  return {s.x + s.speed * std::cos(s.heading) * t, s.y + s.speed * std::sin(s.heading) * t, s.heading, s.speed};
}

AgentState lerp_state(const AgentState& a, const AgentState& b, double u) {
  return {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y), wrap_angle(a.heading + u * wrap_angle(b.heading - a.heading)),
          a.speed + u * (b.speed - a.speed)};
}

/// State at time t along a trajectory sampled every kStepDt; clamps past the end.
AgentState interpolate(const std::vector<AgentState>& traj, double t) {
  if (traj.size() == 1 || t <= 0.0) return traj.front();
  const double f = t / kStepDt;
  const auto last = static_cast<double>(traj.size() - 1);
  if (f >= last) return traj.back();
  const auto k = static_cast<std::size_t>(f);
  return lerp_state(traj[k], traj[k + 1], f - static_cast<double>(k));
}

std::array<Point2, 4> corners(const OrientedBox& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  std::array<Point2, 4> out;
  const double sx[] = {1, 1, -1, -1}, sy[] = {1, -1, -1, 1};
  for (int i = 0; i < 4; ++i)
    out[static_cast<std::size_t>(i)] = {b.x + sx[i] * hl * c - sy[i] * hw * s, b.y + sx[i] * hl * s + sy[i] * hw * c};
  return out;
}

OrientedBox footprint(const AgentState& a) { return {a.x, a.y, a.heading, kVehicleLength, kVehicleWidth}; }

std::size_t nearest_lane(const std::vector<PolylineFrame>& lanes, Point2 p) {
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const double d = std::abs(lanes[i].project(p).d);
    if (d < best_d) best_d = d, best = i;
  }
  return best;
}

std::optional<LeaderGap> closer(std::optional<LeaderGap> a, LeaderGap b) {
  if (!a || b.gap < a->gap) return b;
  return a;
}

}  // namespace

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = corners(a), cb = corners(b);
  for (const OrientedBox* box : {&a, &b}) {
    for (double ang : {box->heading, box->heading + 0.5 * std::numbers::pi}) {
      const double ax = std::cos(ang), ay = std::sin(ang);
      double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
      for (const auto& p : ca) {
        const double v = p.x * ax + p.y * ay;
        amin = std::min(amin, v), amax = std::max(amax, v);
      }
      for (const auto& p : cb) {
        const double v = p.x * ax + p.y * ay;
        bmin = std::min(bmin, v), bmax = std::max(bmax, v);
      }
      if (amax < bmin || bmax < amin) return false;
    }
  }
  return true;
}

bool ego_at_fault(const AgentState& ego, const AgentState& other) {
  const Point2 rel = to_local(ego.pose(), {other.x, other.y});
  return !(rel.x < 0.0 && std::abs(rel.y) < kVehicleWidth);
}

TrafficMode parse_traffic_mode(const std::string& name) {
  if (name == "reactive") return TrafficMode::reactive;
  if (name == "non_reactive" || name == "non-reactive") return TrafficMode::non_reactive;
  throw Error("unknown traffic mode: " + name);
}

std::string to_string(TrafficMode mode) { return mode == TrafficMode::reactive ? "reactive" : "non_reactive"; }

// ---------------------------------------------------------------- planners

std::vector<AgentState> DiffusionPlanner::plan(const PlanRequest& req) {
  const ScenePlanner planner(ckpt_, req.scene);
  return planner.sample(req.strategy, cfg_, req.seed).states.front();
}

std::vector<AgentState> ExpertPlanner::plan(const PlanRequest& req) {
  const Scenario& sc = req.scene;
  const PolylineFrame route(sc.route);
  const AgentState& cur = sc.ego_current();
  const FrenetPoint f0 = route.project({cur.x, cur.y});
  const double psi0 = wrap_angle(cur.heading - route.heading_at(f0.s));
  double v = cur.speed;
  double s = f0.s;
  const double d0 = f0.d;
  const double vd0 = v * std::sin(psi0);

  std::vector<FrenetPoint> others;
  std::vector<double> other_v;
  for (const auto& a : sc.agents) {
    const AgentState& last = a.history.back();
    others.push_back(route.project({last.x, last.y}));
    other_v.push_back(last.speed * std::cos(wrap_angle(last.heading - route.heading_at(others.back().s))));
  }
  auto lateral = [&](double t) { return (d0 + (vd0 + d0 / kLateralTau) * t) * std::exp(-t / kLateralTau); };

  std::vector<AgentState> out{cur};
  constexpr int kSub = 5;
  const double dt = kStepDt / kSub;
  double t = 0.0;
  for (int k = 1; k <= kFutureSteps; ++k) {
    for (int j = 0; j < kSub; ++j) {
      const double d = lateral(t);
      std::optional<LeaderGap> lead;
      for (std::size_t i = 0; i < others.size(); ++i) {
        const double os = others[i].s + other_v[i] * t;
        if (os <= s || std::abs(others[i].d - d) >= kLateralOverlap) continue;
        lead = closer(lead, {os - s - kVehicleLength, std::max(other_v[i], 0.0)});
      }
      const double a = idm_acceleration(idm_, v, lead);
      v = std::max(0.0, v + a * dt);
      s += v * dt;
      t += dt;
    }
    const double d = lateral(t);
    const double dd = (lateral(t + 1e-3) - lateral(t - 1e-3)) / 2e-3;
    const Point2 p = route.to_world(s, d);
    const double heading = wrap_angle(route.heading_at(s) + std::atan2(dd, std::max(v, 1e-3)));
    out.push_back({p.x, p.y, heading, std::hypot(v, dd)});
  }
  return out;
}

std::vector<AgentState> StationaryPlanner::plan(const PlanRequest& req) {
  AgentState s = req.scene.ego_current();
  s.speed = 0.0;
  return std::vector<AgentState>(kFutureSteps + 1, s);
}

std::vector<AgentState> ExpertReplayPlanner::plan(const PlanRequest& req) {
  if (!scene_.expert_future || req.time >= kReplayHorizon - 1e-9) return fallback_.plan(req);
  const std::vector<AgentState>& logged = scene_.expert_future->front();
  std::vector<AgentState> out;
  for (int k = 0; k <= kFutureSteps; ++k) {
    const double t = req.time + k * kStepDt;
    out.push_back(t <= kReplayHorizon ? interpolate(logged, t) : extrapolate(logged.back(), t - kReplayHorizon));
  }
  return out;
}

std::vector<AgentState> CollisionStubPlanner::plan(const PlanRequest& req) {
  const AgentState cur = req.scene.ego_current();
  if (req.scene.agents.empty()) throw PlannerFailure("collision stub needs a neighbour");
  const AgentState& target = req.scene.agents.front().history.back();
  std::vector<AgentState> out{cur};
  for (int k = 1; k <= kFutureSteps; ++k) {
    AgentState p = extrapolate(target, k * kStepDt);
    p.speed = std::hypot(p.x - out.back().x, p.y - out.back().y) / kStepDt;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------- scoring

double composite_score(bool hard_fail, double progress, double comfort) {
  if (hard_fail) return 0.0;
  return 100.0 * (0.6 * std::clamp(progress, 0.0, 1.0) + 0.4 * std::clamp(comfort, 0.0, 1.0));
}

nlohmann::json EpisodeScore::to_json() const {
  return {{"composite", composite},         {"collision", collision ? "fail" : "pass"},
          {"corridor", off_corridor ? "fail" : "pass"},
          {"planner_failure", planner_failure},
          {"progress", progress},           {"comfort", comfort},
          {"ego_progress_m", ego_progress_m}, {"reference_progress_m", reference_progress_m}};
}

namespace {

nlohmann::json state_json(const AgentState& s) { return {s.x, s.y, s.heading, s.speed}; }

}  // namespace

nlohmann::json TickRecord::to_json() const {
  nlohmann::json j{{"tick", tick},
                   {"t", t},
                   {"ego", state_json(ego)},
                   {"ego_accel", ego_accel},
                   {"strategy", strategy_name(strategy)},
                   {"replan", replanned}};
  j["agents"] = nlohmann::json::array();
  for (const auto& a : agents) j["agents"].push_back(state_json(a));
  if (replanned) {
    j["plan"] = nlohmann::json::array();
    for (const auto& p : plan) j["plan"].push_back(state_json(p));
  }
  if (!events.empty()) j["events"] = events;
  return j;
}

// ---------------------------------------------------------------- world

double agent_acceleration(const WorldState& w, const std::vector<PolylineFrame>& lanes, std::size_t i, bool ego_leads,
                          const IdmParams& idm) {
  const WorldAgent& me = w.agents[i];
  const PolylineFrame& lane = lanes[static_cast<std::size_t>(me.lane)];
  std::optional<LeaderGap> lead;
  for (std::size_t j = 0; j < w.agents.size(); ++j) {
    if (j == i) continue;
    const WorldAgent& o = w.agents[j];
    const FrenetPoint f = o.lane == me.lane ? FrenetPoint{o.s, o.d} : lane.project({o.state.x, o.state.y});
    if (f.s <= me.s || std::abs(f.d - me.d) >= kLateralOverlap) continue;
    lead = closer(lead, {f.s - me.s - kVehicleLength, o.state.speed});
  }
  if (ego_leads) {
    const FrenetPoint f = lane.project({w.ego.x, w.ego.y});
    if (f.s > me.s && std::abs(f.d - me.d) < kLateralOverlap)
      lead = closer(lead, {f.s - me.s - kVehicleLength, w.ego.speed});
  }
  IdmParams p = idm;
  p.v0 = me.v0;
  return idm_acceleration(p, me.state.speed, lead);
}

Episode::Episode(EgoPlanner& planner, const Scenario& scene, EpisodeConfig cfg)
    : planner_(planner), scene_(scene), cfg_(std::move(cfg)), route_(scene.route) {
  validate(scene_);
  check_strategy(cfg_.strategy);
  if (!(cfg_.horizon_s > 0.0)) throw Error("episode horizon must be positive");
  if (scene_.lanes.empty()) throw MalformedScenario("closed-loop scenario needs at least one lane");
  for (const auto& l : scene_.lanes) lanes_.emplace_back(l);
  std::sort(cfg_.strategy_feed.begin(), cfg_.strategy_feed.end(),
            [](const StrategyCommand& a, const StrategyCommand& b) { return a.time < b.time; });
  for (const auto& c : cfg_.strategy_feed) check_strategy(c.strategy);
  total_ticks_ = static_cast<int>(std::llround(cfg_.horizon_s / kTickDt));
  active_ = cfg_.strategy;

  world_.ego = scene_.ego_current();
  ego_samples_ = scene_.ego_history;
  for (const auto& a : scene_.agents) {
    WorldAgent w;
    w.state = a.history.back();
    const Point2 p{w.state.x, w.state.y};
    w.lane = static_cast<int>(nearest_lane(lanes_, p));
    const FrenetPoint f = lanes_[static_cast<std::size_t>(w.lane)].project(p);
    w.s = f.s;
    w.d = f.d;
    w.v0 = std::max(w.state.speed, 0.5);
    world_.agents.push_back(w);
    agent_samples_.push_back(a.history);
  }

  TickRecord rec;
  rec.ego = world_.ego;
  for (const auto& a : world_.agents) rec.agents.push_back(a.state);
  rec.strategy = active_;
  check_events(rec);
  trace_.push_back(std::move(rec));
}

void Episode::request_strategy(int s) {
  check_strategy(s);
  pending_ = s;
}

Scenario Episode::snapshot() const {
  Scenario sc;
  sc.id = scene_.id;
  sc.lanes = scene_.lanes;
  sc.route = scene_.route;
  sc.static_objects = scene_.static_objects;
  sc.ego_history.assign(ego_samples_.end() - kHistoryLen, ego_samples_.end());
  for (const auto& h : agent_samples_) sc.agents.push_back({{h.end() - kHistoryLen, h.end()}});
  return sc;
}

void Episode::replan() {
  while (feed_pos_ < cfg_.strategy_feed.size() && cfg_.strategy_feed[feed_pos_].time <= world_.time + 1e-9)
    pending_ = cfg_.strategy_feed[feed_pos_++].strategy;
  if (pending_) {
    active_ = *pending_;
    pending_.reset();
  }
  const Scenario sc = snapshot();
  const std::uint64_t seed = mix_seed(cfg_.seed, static_cast<std::uint64_t>(replans_++));
  std::vector<AgentState> plan;
  try {
    plan = planner_.plan({sc, active_, seed, world_.time});
  } catch (const std::exception& e) {
    failure_ = true;
    throw PlannerFailure(std::string("planner failed at t=") + std::to_string(world_.time) + ": " + e.what());
  }
  if (plan.size() < 2) {
    failure_ = true;
    throw PlannerFailure("planner returned fewer than two states");
  }
  for (const auto& p : plan)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.heading)) {
      failure_ = true;
      throw PlannerFailure("planner returned non-finite states");
    }
  plan.front() = world_.ego;
  plan_ = std::move(plan);
  plan_tick_ = world_.tick;
}

void Episode::move_ego() {
  const double t = (world_.tick - plan_tick_) * kTickDt;
  const AgentState prev = world_.ego;
  AgentState next = interpolate(plan_, t);
  next.speed = std::hypot(next.x - prev.x, next.y - prev.y) / kTickDt;
  world_.ego_accel = (next.speed - prev.speed) / kTickDt;
  world_.ego = next;
}

void Episode::step_agents() {
  const double t = world_.time;
  const bool replay = cfg_.mode == TrafficMode::non_reactive && scene_.expert_future && t <= kReplayHorizon + 1e-9;
  if (replay) {
    const FutureStates& fut = *scene_.expert_future;
    for (std::size_t i = 0; i < world_.agents.size(); ++i) {
      WorldAgent& a = world_.agents[i];
      const AgentState prev = a.state;
      a.state = interpolate(fut[i + 1], t);
      a.accel = (a.state.speed - prev.speed) / kTickDt;
      const FrenetPoint f = lanes_[static_cast<std::size_t>(a.lane)].project({a.state.x, a.state.y});
      a.s = f.s;
      a.d = f.d;
    }
    return;
  }
  // Synchronous update from the previous tick's world.
  const WorldState before = world_;
  const bool ego_leads = cfg_.mode == TrafficMode::reactive;
  for (std::size_t i = 0; i < world_.agents.size(); ++i) {
    WorldAgent& a = world_.agents[i];
    a.accel = agent_acceleration(before, lanes_, i, ego_leads, IdmParams{});
    a.state.speed = std::max(0.0, a.state.speed + a.accel * kTickDt);
    a.s += a.state.speed * kTickDt;
    const PolylineFrame& lane = lanes_[static_cast<std::size_t>(a.lane)];
    const Point2 p = lane.to_world(a.s, a.d);
    a.state.x = p.x;
    a.state.y = p.y;
    a.state.heading = wrap_angle(lane.heading_at(a.s));
  }
}

void Episode::check_events(TickRecord& rec) {
  const AgentState& ego = world_.ego;
  const OrientedBox eb = footprint(ego);
  for (std::size_t i = 0; i < world_.agents.size(); ++i) {
    const AgentState& a = world_.agents[i].state;
    if (std::hypot(a.x - ego.x, a.y - ego.y) > kVehicleLength + kVehicleWidth) continue;
    if (boxes_overlap(eb, footprint(a)) && ego_at_fault(ego, a)) {
      collision_ = true;
      rec.events.push_back("collision:agent" + std::to_string(i + 1));
    }
  }
  for (std::size_t i = 0; i < scene_.static_objects.size(); ++i)
    if (boxes_overlap(eb, scene_.static_objects[i])) {
      collision_ = true;
      rec.events.push_back("collision:static" + std::to_string(i));
    }
  const std::size_t lane = nearest_lane(lanes_, {ego.x, ego.y});
  if (std::abs(lanes_[lane].project({ego.x, ego.y}).d) > 0.5 * kLaneWidth + kCorridorTolerance) {
    off_corridor_ = true;
    rec.events.push_back("off_corridor");
  }
}

const TickRecord& Episode::step() {
  if (done()) throw Error("episode already finished");
  if (world_.tick % kTicksPerReplan == 0) {
    replan();
    trace_.back().replanned = true;
    trace_.back().plan = plan_;
    trace_.back().strategy = active_;
  }
  ++world_.tick;
  world_.time = world_.tick * kTickDt;
  move_ego();
  step_agents();
  if (world_.tick % kTicksPerSample == 0) {
    ego_samples_.push_back(world_.ego);
    for (std::size_t i = 0; i < world_.agents.size(); ++i) agent_samples_[i].push_back(world_.agents[i].state);
  }

  TickRecord rec;
  rec.tick = world_.tick;
  rec.t = world_.time;
  rec.ego = world_.ego;
  rec.ego_accel = world_.ego_accel;
  for (const auto& a : world_.agents) rec.agents.push_back(a.state);
  rec.strategy = active_;
  rec.plan = plan_;
  check_events(rec);
  trace_.push_back(std::move(rec));
  return trace_.back();
}

void Episode::run() {
  while (!done()) step();
}

double Episode::ego_progress() const {
  const AgentState& start = scene_.ego_current();
  return route_.project({world_.ego.x, world_.ego.y}).s - route_.project({start.x, start.y}).s;
}

EpisodeScore Episode::score(double reference_progress_m) const {
  EpisodeScore sc;
  sc.collision = collision_;
  sc.off_corridor = off_corridor_;
  sc.planner_failure = failure_;
  sc.ego_progress_m = ego_progress();
  sc.reference_progress_m = reference_progress_m;
  sc.progress = reference_progress_m > 1e-6 ? std::clamp(sc.ego_progress_m / reference_progress_m, 0.0, 1.0)
                                            : (sc.ego_progress_m >= -1e-6 ? 1.0 : 0.0);

  // Closed-loop motion only, sampled every 0.25 s from the start state.
  const std::vector<AgentState> samples(ego_samples_.begin() + (kHistoryLen - 1), ego_samples_.end());
  sc.comfort = 1.0;
  if (samples.size() >= 4) {
    const KinematicProfile k = kinematics(positions(samples), kStepDt);
    double ok = 0.0;
    for (std::size_t i = 0; i < k.accels.size(); ++i) {
      const bool jerk_ok = i == 0 || std::abs(k.jerks[i - 1]) <= kComfortJerk;
      if (std::abs(k.accels[i]) <= kComfortAccel && jerk_ok) ok += 1.0;
    }
    sc.comfort = ok / static_cast<double>(k.accels.size());
  }
  sc.composite = composite_score(sc.hard_fail(), sc.progress, sc.comfort);
  return sc;
}

double reference_progress(const Scenario& scene, const EpisodeConfig& cfg) {
  ExpertPlanner expert;
  EpisodeConfig ref = cfg;
  ref.strategy_feed.clear();
  ref.strategy = 0;
  Episode ep(expert, scene, ref);
  ep.run();
  return ep.ego_progress();
}

EpisodeResult run_episode(EgoPlanner& planner, const Scenario& scene, const EpisodeConfig& cfg) {
  Episode ep(planner, scene, cfg);
  try {
    ep.run();
  } catch (const PlannerFailure&) {
  }
  EpisodeResult r;
  r.scenario_id = scene.id;
  r.score = ep.score(reference_progress(scene, cfg));
  r.trace = ep.trace();
  return r;
}

void write_trace_jsonl(const std::vector<TickRecord>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : trace) out << r.to_json().dump() << '\n';
}

SuiteResult score_suite(EgoPlanner& planner, const std::vector<Scenario>& corpus, int s, int n,
                        const EpisodeConfig& base, const std::optional<std::filesystem::path>& out_dir) {
  check_strategy(s);
  if (n < 1 || static_cast<std::size_t>(n) > corpus.size()) throw Error("corpus holds fewer scenarios than requested");
  SuiteResult res;
  for (int i = 0; i < n; ++i) {
    EpisodeConfig cfg = base;
    cfg.strategy = s;
    cfg.seed = base.seed + static_cast<std::uint64_t>(i);
    res.episodes.push_back(run_episode(planner, corpus[static_cast<std::size_t>(i)], cfg));
    const EpisodeScore& sc = res.episodes.back().score;
    res.mean_composite += sc.composite;
    res.collision_free_rate += sc.collision ? 0.0 : 1.0;
    res.corridor_rate += sc.off_corridor ? 0.0 : 1.0;
    res.mean_progress += sc.progress;
    res.mean_comfort += sc.comfort;
  }
  const double dn = static_cast<double>(n);
  res.mean_composite /= dn;
  res.collision_free_rate /= dn;
  res.corridor_rate /= dn;
  res.mean_progress /= dn;
  res.mean_comfort /= dn;

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream csv(*out_dir / "summary.csv");
    if (!csv) throw Error("cannot write " + (*out_dir / "summary.csv").string());
    csv << "scenario_id,strategy,composite,collision,corridor,progress,comfort\n";
    csv << std::fixed << std::setprecision(4);
    for (const auto& e : res.episodes) {
      const EpisodeScore& sc = e.score;
      csv << e.scenario_id << ',' << strategy_name(s) << ',' << sc.composite << ',' << (sc.collision ? "fail" : "pass")
          << ',' << (sc.off_corridor ? "fail" : "pass") << ',' << sc.progress << ',' << sc.comfort << '\n';
      nlohmann::json j = sc.to_json();
      j["scenario_id"] = e.scenario_id;
      j["strategy"] = strategy_name(s);
      std::ofstream(*out_dir / (e.scenario_id + ".json")) << j.dump(2) << '\n';
    }
    csv << "mean," << strategy_name(s) << ',' << res.mean_composite << ',' << res.collision_free_rate << ','
        << res.corridor_rate << ',' << res.mean_progress << ',' << res.mean_comfort << '\n';
  }
  return res;
}

}  // namespace mdp
