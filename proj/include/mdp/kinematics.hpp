#pragma once

#include <span>
#include <vector>

#include "mdp/geometry.hpp"
#include "mdp/scene.hpp"

namespace mdp {

/// Finite-difference motion profile of a sampled path. Speeds come from
/// consecutive displacements; acceleration and jerk are magnitudes of the
/// successive differences of the velocity and acceleration vectors.
struct KinematicProfile {
  std::vector<double> speeds;  // n - 1
  std::vector<double> accels;  // n - 2
  std::vector<double> jerks;   // n - 3
};

/// Requires at least 4 states; throws TooShort otherwise.
KinematicProfile kinematics(std::span<const Point2> path, double dt);

std::vector<Point2> positions(std::span<const AgentState> states);

}  // namespace mdp
