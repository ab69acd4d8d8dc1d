#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mdp/scene.hpp"
#include "mdp/trajectory.hpp"

namespace mdp {

/// Token budget per scene element class.
struct TokenBudget {
  int lanes = 16;
  int route = 8;
  int agents = kMaxAgents;
  int statics = 8;
};

inline constexpr int kPolylinePoints = 10;
inline constexpr int kPolylineFeatures = 4;  // x, y, dir_x, dir_y
inline constexpr int kAgentFeatures = 5;     // x, y, cos h, sin h, speed
inline constexpr int kStaticFeatures = 6;    // x, y, cos h, sin h, length, width
inline constexpr double kSegmentLength = 45.0;
inline constexpr double kPositionScale = 20.0;
inline constexpr double kSpeedScale = 10.0;
inline constexpr double kSizeScale = 5.0;
inline constexpr int kFlatDim = kStateDim * (kFutureSteps + 1);

/// Encoder inputs and training target in the ego-centric frame (the ego's
/// last history pose sits at the origin with heading 0).
struct ModelInput {
  Pose ego_pose;  // world pose of the model-frame origin
  TokenBudget budget;

  RowMatrix lanes;  // [lanes * kPolylinePoints, kPolylineFeatures]
  std::vector<std::uint8_t> lane_valid;
  RowMatrix route;  // [route * kPolylinePoints, kPolylineFeatures]
  std::vector<std::uint8_t> route_valid;
  RowMatrix agents;  // [agents * history, kAgentFeatures]; slot 0 = ego
  std::vector<std::uint8_t> agent_valid;
  RowMatrix statics;  // [statics, kStaticFeatures]
  std::vector<std::uint8_t> static_valid;
  int history = kHistoryLen;

  RowMatrix current;                // [agents, kStateDim] state at t = 0
  std::optional<RowMatrix> target;  // [agents, kFlatDim] expert future, physical units

  /// 1 iff neighbour slot i (agent slot i + 1) is populated.
  std::vector<std::uint8_t> neighbor_mask() const {
    return {agent_valid.begin() + 1, agent_valid.end()};
  }
};

AgentState to_model_state(const Pose& ego, const AgentState& s);
AgentState to_world_state(const Pose& ego, const AgentState& s);

/// Rows of (x, y, cos h, sin h) for each state, flattened.
RowMatrix flatten_states(const std::vector<std::vector<AgentState>>& tracks, int rows);

/// Throws MalformedScenario if histories have inconsistent lengths.
ModelInput to_model_frame(const Scenario& s, const TokenBudget& budget = {});

/// Same scenario with every coordinate expressed in the ego-centric frame.
Scenario recenter(const Scenario& s);

/// Converts model-frame flat rows [P, kFlatDim] back to world-frame states.
/// Speeds are filled from finite differences (the last step repeats).
std::vector<std::vector<AgentState>> rows_to_world(const Pose& ego, const RowMatrix& flat);

}  // namespace mdp
