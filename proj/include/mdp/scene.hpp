#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mdp/geometry.hpp"

namespace mdp {

// Desk-scale planning horizon: 16 future steps of 0.25 s, 10 history states,
// ego plus up to 10 neighbours.
inline constexpr int kHistoryLen = 10;
inline constexpr int kFutureSteps = 16;
inline constexpr int kMaxAgents = 11;
inline constexpr int kStateDim = 4;  // x, y, cos h, sin h
inline constexpr double kStepDt = 0.25;

inline constexpr double kLaneWidth = 3.5;
inline constexpr double kVehicleLength = 4.5;
inline constexpr double kVehicleWidth = 1.9;

struct AgentState {
  double x = 0.0;        // m
  double y = 0.0;        // m
  double heading = 0.0;  // rad, (-pi, pi]
  double speed = 0.0;    // m/s, >= 0

  Pose pose() const { return {x, y, heading}; }
  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct OrientedBox {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double length = 0.0;
  double width = 0.0;
  friend bool operator==(const OrientedBox&, const OrientedBox&) = default;
};

struct AgentTrack {
  std::vector<AgentState> history;
  friend bool operator==(const AgentTrack&, const AgentTrack&) = default;
};

/// Per-agent future states, index 0 = ego; each holds kFutureSteps + 1 states
/// whose first entry repeats the last history state.
using FutureStates = std::vector<std::vector<AgentState>>;

struct Scenario {
  std::string id;
  std::vector<Polyline> lanes;
  Polyline route;
  std::vector<AgentState> ego_history;
  std::vector<AgentTrack> agents;
  std::vector<OrientedBox> static_objects;
  std::optional<FutureStates> expert_future;

  const AgentState& ego_current() const { return ego_history.back(); }
  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Throws MalformedScenario when a structural invariant is broken.
void validate(const Scenario& s);

}  // namespace mdp
