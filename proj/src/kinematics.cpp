#include "mdp/kinematics.hpp"

#include <cmath>

#include "mdp/errors.hpp"

namespace mdp {

KinematicProfile kinematics(std::span<const Point2> path, double dt) {
  if (path.size() < 4) throw TooShort("kinematics needs at least 4 states");
  const std::size_t n = path.size();
  std::vector<Point2> vel(n - 1);
  std::vector<Point2> acc(n - 2);
  KinematicProfile out;
  out.speeds.resize(n - 1);
  out.accels.resize(n - 2);
  out.jerks.resize(n - 3);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    vel[k] = {(path[k + 1].x - path[k].x) / dt, (path[k + 1].y - path[k].y) / dt};
    out.speeds[k] = std::hypot(vel[k].x, vel[k].y);
  }
  for (std::size_t k = 0; k + 2 < n; ++k) {
    acc[k] = {(vel[k + 1].x - vel[k].x) / dt, (vel[k + 1].y - vel[k].y) / dt};
    out.accels[k] = std::hypot(acc[k].x, acc[k].y);
  }
  for (std::size_t k = 0; k + 3 < n; ++k)
    out.jerks[k] = std::hypot(acc[k + 1].x - acc[k].x, acc[k + 1].y - acc[k].y) / dt;
  return out;
}

std::vector<Point2> positions(std::span<const AgentState> states) {
  std::vector<Point2> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back({s.x, s.y});
  return out;
}

}  // namespace mdp
