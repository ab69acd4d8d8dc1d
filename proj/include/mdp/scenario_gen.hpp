#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mdp/scene.hpp"

namespace mdp {

enum class ScenarioKind { straight, lead_vehicle, lane_change, mixed };

ScenarioKind parse_scenario_kind(std::string_view name);
std::string to_string(ScenarioKind kind);

/// Intelligent driver model parameters. Defaults are the expert demonstrator's.
struct IdmParams {
  double a_max = 2.0;    // m/s^2
  double v0 = 12.0;      // m/s
  double s0 = 2.0;       // m, standstill gap
  double headway = 1.5;  // s
  double delta = 4.0;
  double b = 2.0;  // comfortable deceleration, m/s^2
};

struct LeaderGap {
  double gap = 0.0;    // bumper to bumper, m
  double speed = 0.0;  // leader speed, m/s
};

double idm_acceleration(const IdmParams& p, double v, std::optional<LeaderGap> leader);

inline constexpr double kPurePursuitLookahead = 8.0;

/// Pure-pursuit curvature for a vehicle at lateral offset `d` with heading
/// `psi` relative to a straight reference, chasing the point `lookahead`
/// metres ahead at lateral offset `d_target`.
double pure_pursuit_curvature(double d, double psi, double d_target, double lookahead);

/// Deterministic synthetic corpus: straight multi-lane roads with IDM traffic
/// and an IDM + pure-pursuit expert ego. Scenario i depends only on (seed, i, kind,
/// max_pre_roll). A positive `max_pre_roll` simulates a random lead-in of up to that
/// many seconds before the first history state, so traffic has time to settle.
std::vector<Scenario> generate_scenarios(std::uint64_t seed, int n, ScenarioKind kind, double max_pre_roll = 0.0);

}  // namespace mdp
