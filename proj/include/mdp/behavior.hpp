#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mdp/checkpoint.hpp"
#include "mdp/kinematics.hpp"
#include "mdp/sampler.hpp"
#include "mdp/scene.hpp"

namespace mdp {

struct RewardSpec {
  int strategy = 1;
  double v_ref = 12.0;   // m/s
  double j_ref = 2.0;    // m/s^3
  double a_ref = 2.0;    // m/s^2
  double w_g = 0.5;      // progress deficit weight
  double w_h = 0.5;      // headway margin weight
  double w_a = 0.5;      // acceleration weight
  double collision_penalty = -5.0;
  double headway = 1.5;  // s, target time headway

  /// Throws InvalidStrategy for the base strategy or an unknown id.
  static RewardSpec for_strategy(int s);
};

/// Disc-overlap test between the ego path and constant-velocity
/// extrapolations of the neighbours' last observed states (steps 1..n-1).
bool collision_proxy(const std::vector<AgentState>& ego, const Scenario& scene);

/// Distance travelled along the route between the first and last states.
double route_progress(const std::vector<AgentState>& ego, const Scenario& scene);

/// Smallest clamped time-headway margin (headway - target) / target in
/// [-1, 1] to the nearest in-lane leader; 1 without a leader.
double min_headway_margin(const std::vector<AgentState>& ego, const Scenario& scene, double target_headway);

/// Strategy-specific reward of a world-frame ego trajectory.
double reward(const std::vector<AgentState>& ego, const Scenario& scene, const RewardSpec& spec);

struct SpeedBins {
  double low = 0.0;   // < 5 m/s, percent
  double mid = 0.0;   // 5 to 12 m/s
  double high = 0.0;  // > 12 m/s
};
inline constexpr double kLowSpeed = 5.0;
inline constexpr double kHighSpeed = 12.0;

SpeedBins speed_bins(const std::vector<double>& speeds);

struct OpenLoopRow {
  int strategy = 0;
  double mean_velocity = 0.0;
  double mean_abs_accel = 0.0;
  double mean_abs_jerk = 0.0;
  SpeedBins bins;
  int scenarios = 0;
};

/// Pools per-step ego kinematics of sampled plans over the first
/// `n_scenarios` scenes. Scene i is sampled with seed `seed + i`.
OpenLoopRow open_loop_report(const Checkpoint& ckpt, const std::vector<Scenario>& corpus, int s, int n_scenarios,
                             const SamplerConfig& cfg, std::uint64_t seed);

/// Same statistics over given ego trajectories.
OpenLoopRow open_loop_stats(const std::vector<std::vector<AgentState>>& ego_paths, int s);

void write_open_loop_csv(const std::vector<OpenLoopRow>& rows, const std::filesystem::path& path);
std::string format_open_loop_table(const std::vector<OpenLoopRow>& rows);

/// Mean Euclidean distance between corresponding states.
double average_displacement(const std::vector<AgentState>& a, const std::vector<AgentState>& b);

/// Constant-velocity continuation of the last history state over the horizon.
std::vector<AgentState> straight_line_future(const Scenario& scene);

}  // namespace mdp
