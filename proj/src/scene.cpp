#include "mdp/scene.hpp"

#include <cmath>
#include <numbers>

#include "mdp/errors.hpp"

namespace mdp {
namespace {

void check_polyline(const Polyline& line, const char* what) {
  if (line.size() < 2) throw MalformedScenario(std::string(what) + " has fewer than 2 points");
  for (std::size_t i = 1; i < line.size(); ++i) {
    if (std::hypot(line[i].x - line[i - 1].x, line[i].y - line[i - 1].y) > 10.0 + 1e-9)
      throw MalformedScenario(std::string(what) + " has points more than 10 m apart");
  }
}

void check_state(const AgentState& s) {
  if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.heading) ||
      !std::isfinite(s.speed))
    throw MalformedScenario("non-finite agent state");
  if (s.heading <= -std::numbers::pi || s.heading > std::numbers::pi)
    throw MalformedScenario("heading outside (-pi, pi]");
  if (s.speed < 0.0) throw MalformedScenario("negative speed");
}

}  // namespace

void validate(const Scenario& s) {
  for (const auto& lane : s.lanes) check_polyline(lane, "lane");
  check_polyline(s.route, "route");
  if (s.ego_history.empty()) throw MalformedScenario("empty ego history");
  if (s.agents.size() + 1 > static_cast<std::size_t>(kMaxAgents))
    throw MalformedScenario("too many agents");
  for (const auto& st : s.ego_history) check_state(st);
  for (const auto& a : s.agents) {
    if (a.history.size() != s.ego_history.size())
      throw MalformedScenario("agent history length differs from ego history length");
    for (const auto& st : a.history) check_state(st);
  }
  if (s.expert_future) {
    const auto& fut = *s.expert_future;
    if (fut.size() != s.agents.size() + 1)
      throw MalformedScenario("expert_future agent count mismatch");
    for (std::size_t i = 0; i < fut.size(); ++i) {
      if (fut[i].size() != static_cast<std::size_t>(kFutureSteps + 1))
        throw MalformedScenario("expert_future has wrong number of states");
      const AgentState& last = i == 0 ? s.ego_history.back() : s.agents[i - 1].history.back();
      if (!(fut[i][0] == last))
        throw MalformedScenario("expert_future state 0 differs from the last history state");
      for (const auto& st : fut[i]) check_state(st);
    }
  }
}

}  // namespace mdp
