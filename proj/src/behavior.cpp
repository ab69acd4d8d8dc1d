#include "mdp/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "mdp/errors.hpp"
#include "mdp/strategy.hpp"

namespace mdp {

namespace {

constexpr double kDiscRadius = 1.21;  // covers a 1.5 m x 1.9 m footprint slice
constexpr double kDiscOffsets[] = {-1.5, 0.0, 1.5};

AgentState extrapolate(const AgentState& s, double t) {
  return {s.x + s.speed * std::cos(s.heading) * t, s.y + s.speed * std::sin(s.heading) * t, s.heading, s.speed};
}

bool footprints_overlap(const AgentState& a, const AgentState& b) {
  if (std::hypot(a.x - b.x, a.y - b.y) > kVehicleLength + 2.0 * kDiscRadius) return false;
  for (double oa : kDiscOffsets)
    for (double ob : kDiscOffsets) {
      const double ax = a.x + oa * std::cos(a.heading);
      const double ay = a.y + oa * std::sin(a.heading);
      const double bx = b.x + ob * std::cos(b.heading);
      const double by = b.y + ob * std::sin(b.heading);
      if (std::hypot(ax - bx, ay - by) < 2.0 * kDiscRadius) return true;
    }
  return false;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double mean_abs(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s / static_cast<double>(v.size());
}

}  // namespace

RewardSpec RewardSpec::for_strategy(int s) {
  check_strategy(s);
  if (s == static_cast<int>(Strategy::base)) throw InvalidStrategy("the base strategy has no reward");
  RewardSpec r;
  r.strategy = s;
  return r;
}

bool collision_proxy(const std::vector<AgentState>& ego, const Scenario& scene) {
  for (std::size_t k = 1; k < ego.size(); ++k) {
    const double t = static_cast<double>(k) * kStepDt;
    for (const auto& a : scene.agents)
      if (footprints_overlap(ego[k], extrapolate(a.history.back(), t))) return true;
  }
  return false;
}

double route_progress(const std::vector<AgentState>& ego, const Scenario& scene) {
  if (ego.size() < 2) return 0.0;
  const PolylineFrame route(scene.route);
  return route.project({ego.back().x, ego.back().y}).s - route.project({ego.front().x, ego.front().y}).s;
}

double min_headway_margin(const std::vector<AgentState>& ego, const Scenario& scene, double target_headway) {
  const PolylineFrame route(scene.route);
  double margin = 1.0;
  for (std::size_t k = 1; k < ego.size(); ++k) {
    const double t = static_cast<double>(k) * kStepDt;
    const FrenetPoint e = route.project({ego[k].x, ego[k].y});
    const double v = std::hypot(ego[k].x - ego[k - 1].x, ego[k].y - ego[k - 1].y) / kStepDt;
    std::optional<double> best_gap;
    for (const auto& a : scene.agents) {
      const AgentState n = extrapolate(a.history.back(), t);
      const FrenetPoint f = route.project({n.x, n.y});
      if (f.s <= e.s || std::abs(f.d - e.d) >= 0.5 * kLaneWidth) continue;
      const double gap = f.s - e.s - kVehicleLength;
      if (!best_gap || gap < *best_gap) best_gap = gap;
    }
    if (!best_gap) continue;
    const double headway = std::max(*best_gap, 0.0) / std::max(v, 0.5);
    margin = std::min(margin, std::clamp((headway - target_headway) / target_headway, -1.0, 1.0));
  }
  return margin;
}

double reward(const std::vector<AgentState>& ego, const Scenario& scene, const RewardSpec& spec) {
  check_strategy(spec.strategy);
  const auto pts = positions(ego);
  const KinematicProfile k = kinematics(pts, kStepDt);
  const double collision = collision_proxy(ego, scene) ? spec.collision_penalty : 0.0;
  switch (static_cast<Strategy>(spec.strategy)) {
    case Strategy::aggressive: {
      const double horizon = kStepDt * static_cast<double>(ego.size() - 1);
      const double deficit = std::max(0.0, 1.0 - route_progress(ego, scene) / (spec.v_ref * horizon));
      return mean(k.speeds) / spec.v_ref - spec.w_g * deficit + collision;
    }
    case Strategy::conservative:
      return -std::max(0.0, mean(k.speeds) - 0.8 * spec.v_ref) / spec.v_ref +
             spec.w_h * min_headway_margin(ego, scene, spec.headway) + collision;
    case Strategy::comfortable:
      return -mean_abs(k.jerks) / spec.j_ref - spec.w_a * mean_abs(k.accels) / spec.a_ref + collision;
    case Strategy::base:
      break;
  }
  throw InvalidStrategy("the base strategy has no reward");
}

SpeedBins speed_bins(const std::vector<double>& speeds) {
  SpeedBins b;
  if (speeds.empty()) return b;
  double lo = 0, mi = 0, hi = 0;
  for (double v : speeds) {
    if (v < kLowSpeed)
      lo += 1;
    else if (v <= kHighSpeed)
      mi += 1;
    else
      hi += 1;
  }
  const double n = static_cast<double>(speeds.size());
  b.low = 100.0 * lo / n;
  b.mid = 100.0 * mi / n;
  b.high = 100.0 * hi / n;
  return b;
}

OpenLoopRow open_loop_stats(const std::vector<std::vector<AgentState>>& ego_paths, int s) {
  std::vector<double> speeds, accels, jerks;
  for (const auto& path : ego_paths) {
    const auto pts = positions(path);
    const KinematicProfile k = kinematics(pts, kStepDt);
    speeds.insert(speeds.end(), k.speeds.begin(), k.speeds.end());
    accels.insert(accels.end(), k.accels.begin(), k.accels.end());
    jerks.insert(jerks.end(), k.jerks.begin(), k.jerks.end());
  }
  OpenLoopRow row;
  row.strategy = s;
  row.mean_velocity = mean(speeds);
  row.mean_abs_accel = mean_abs(accels);
  row.mean_abs_jerk = mean_abs(jerks);
  row.bins = speed_bins(speeds);
  row.scenarios = static_cast<int>(ego_paths.size());
  return row;
}

OpenLoopRow open_loop_report(const Checkpoint& ckpt, const std::vector<Scenario>& corpus, int s, int n_scenarios,
                             const SamplerConfig& cfg, std::uint64_t seed) {
  check_strategy(s, ckpt.config.heads);
  if (n_scenarios < 0 || static_cast<std::size_t>(n_scenarios) > corpus.size())
    throw Error("corpus holds fewer scenarios than requested");
  std::vector<std::vector<AgentState>> paths;
  for (int i = 0; i < n_scenarios; ++i) {
    const Plan plan = ScenePlanner(ckpt, corpus[static_cast<std::size_t>(i)])
                          .sample(s, cfg, seed + static_cast<std::uint64_t>(i));
    paths.push_back(plan.states.front());
  }
  return open_loop_stats(paths, s);
}

void write_open_loop_csv(const std::vector<OpenLoopRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "strategy,mean_velocity,mean_abs_accel,mean_abs_jerk,low_speed_pct,mid_speed_pct,high_speed_pct\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows)
    out << strategy_name(r.strategy) << ',' << r.mean_velocity << ',' << r.mean_abs_accel << ','
        << r.mean_abs_jerk << ',' << r.bins.low << ',' << r.bins.mid << ',' << r.bins.high << '\n';
}

std::string format_open_loop_table(const std::vector<OpenLoopRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "Strategy" << std::right << std::setw(16) << "Velocity (m/s)"
     << std::setw(18) << "Accel. (m/s^2)" << std::setw(16) << "Jerk (m/s^3)" << std::setw(16) << "Low Speed (%)"
     << std::setw(16) << "Mid Speed (%)" << std::setw(16) << "High Speed (%)" << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows)
    os << std::left << std::setw(14) << strategy_name(r.strategy) << std::right << std::setw(16) << r.mean_velocity
       << std::setw(18) << r.mean_abs_accel << std::setw(16) << r.mean_abs_jerk << std::setw(16) << r.bins.low
       << std::setw(16) << r.bins.mid << std::setw(16) << r.bins.high << '\n';
  return os.str();
}

double average_displacement(const std::vector<AgentState>& a, const std::vector<AgentState>& b) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::hypot(a[i].x - b[i].x, a[i].y - b[i].y);
  return s / static_cast<double>(n);
}

std::vector<AgentState> straight_line_future(const Scenario& scene) {
  std::vector<AgentState> out;
  const AgentState& s = scene.ego_current();
  for (int k = 0; k <= kFutureSteps; ++k) out.push_back(extrapolate(s, k * kStepDt));
  return out;
}

}  // namespace mdp
