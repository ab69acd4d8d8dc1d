#include "mdp/model_frame.hpp"

#include <algorithm>
#include <cmath>

#include "mdp/errors.hpp"

namespace mdp {

AgentState to_model_state(const Pose& ego, const AgentState& s) {
  const Point2 p = to_local(ego, {s.x, s.y});
  return {p.x, p.y, wrap_angle(s.heading - ego.heading), s.speed};
}

AgentState to_world_state(const Pose& ego, const AgentState& s) {
  const Point2 p = to_world(ego, {s.x, s.y});
  return {p.x, p.y, wrap_angle(s.heading + ego.heading), s.speed};
}

RowMatrix flatten_states(const std::vector<std::vector<AgentState>>& tracks, int rows) {
  const int steps = tracks.empty() ? 0 : static_cast<int>(tracks.front().size());
  RowMatrix out = RowMatrix::Zero(rows, steps * kStateDim);
  for (std::size_t i = 0; i < tracks.size() && static_cast<int>(i) < rows; ++i) {
    for (int t = 0; t < steps; ++t) {
      const AgentState& s = tracks[i][static_cast<std::size_t>(t)];
      out(static_cast<Eigen::Index>(i), t * kStateDim + 0) = s.x;
      out(static_cast<Eigen::Index>(i), t * kStateDim + 1) = s.y;
      out(static_cast<Eigen::Index>(i), t * kStateDim + 2) = std::cos(s.heading);
      out(static_cast<Eigen::Index>(i), t * kStateDim + 3) = std::sin(s.heading);
    }
  }
  return out;
}

namespace {

void polyline_tokens(const Polyline& world_line, const Pose& ego, double start_offset,
                     int max_segments, int budget, RowMatrix& out,
                     std::vector<std::uint8_t>& valid) {
  const PolylineFrame frame(world_line);
  const double s_ego = frame.project({ego.x, ego.y}).s;
  for (int j = 0; j < max_segments; ++j) {
    int token = 0;
    while (token < budget && valid[static_cast<std::size_t>(token)]) ++token;
    if (token == budget) return;
    const double s0 = std::max(0.0, s_ego + start_offset + j * kSegmentLength);
    const double s1 = std::min(frame.length(), s_ego + start_offset + (j + 1) * kSegmentLength);
    if (s1 - s0 < 5.0) continue;
    const Polyline pts = resample(frame, s0, s1, kPolylinePoints);
    for (int k = 0; k < kPolylinePoints; ++k) {
      const double s = s0 + (s1 - s0) * k / (kPolylinePoints - 1);
      const Point2 p = to_local(ego, pts[static_cast<std::size_t>(k)]);
      const double h = frame.heading_at(s) - ego.heading;
      const Eigen::Index row = token * kPolylinePoints + k;
      out(row, 0) = p.x / kPositionScale;
      out(row, 1) = p.y / kPositionScale;
      out(row, 2) = std::cos(h);
      out(row, 3) = std::sin(h);
    }
    valid[static_cast<std::size_t>(token)] = 1;
  }
}

void agent_rows(const std::vector<AgentState>& hist, const Pose& ego, int slot, RowMatrix& out) {
  const int h = static_cast<int>(hist.size());
  for (int t = 0; t < h; ++t) {
    const AgentState m = to_model_state(ego, hist[static_cast<std::size_t>(t)]);
    const Eigen::Index row = slot * h + t;
    out(row, 0) = m.x / kPositionScale;
    out(row, 1) = m.y / kPositionScale;
    out(row, 2) = std::cos(m.heading);
    out(row, 3) = std::sin(m.heading);
    out(row, 4) = m.speed / kSpeedScale;
  }
}

}  // namespace

ModelInput to_model_frame(const Scenario& s, const TokenBudget& budget) {
  if (s.ego_history.empty()) throw MalformedScenario("empty ego history");
  const int h = static_cast<int>(s.ego_history.size());
  for (const auto& a : s.agents)
    if (static_cast<int>(a.history.size()) != h)
      throw MalformedScenario("agent history length differs from ego history length");
  if (s.expert_future) {
    if (s.expert_future->size() != s.agents.size() + 1)
      throw MalformedScenario("expert_future agent count mismatch");
    for (const auto& track : *s.expert_future)
      if (track.size() != static_cast<std::size_t>(kFutureSteps + 1))
        throw MalformedScenario("expert_future has wrong number of states");
  }

  ModelInput in;
  in.budget = budget;
  in.history = h;
  in.ego_pose = s.ego_current().pose();
  const Pose& ego = in.ego_pose;

  in.lanes = RowMatrix::Zero(budget.lanes * kPolylinePoints, kPolylineFeatures);
  in.lane_valid.assign(static_cast<std::size_t>(budget.lanes), 0);
  for (const auto& lane : s.lanes)
    polyline_tokens(lane, ego, -30.0, 4, budget.lanes, in.lanes, in.lane_valid);

  in.route = RowMatrix::Zero(budget.route * kPolylinePoints, kPolylineFeatures);
  in.route_valid.assign(static_cast<std::size_t>(budget.route), 0);
  polyline_tokens(s.route, ego, -10.0, budget.route, budget.route, in.route, in.route_valid);

  const int slots = budget.agents;
  in.agents = RowMatrix::Zero(slots * h, kAgentFeatures);
  in.agent_valid.assign(static_cast<std::size_t>(slots), 0);
  in.current = RowMatrix::Zero(slots, kStateDim);
  agent_rows(s.ego_history, ego, 0, in.agents);
  in.agent_valid[0] = 1;
  const int n_neighbors = std::min(static_cast<int>(s.agents.size()), slots - 1);
  for (int i = 0; i < n_neighbors; ++i) {
    agent_rows(s.agents[static_cast<std::size_t>(i)].history, ego, i + 1, in.agents);
    in.agent_valid[static_cast<std::size_t>(i + 1)] = 1;
  }
  for (int i = 0; i <= n_neighbors; ++i) {
    const AgentState& last =
        i == 0 ? s.ego_history.back() : s.agents[static_cast<std::size_t>(i - 1)].history.back();
    const AgentState m = to_model_state(ego, last);
    in.current.row(i) << m.x, m.y, std::cos(m.heading), std::sin(m.heading);
  }

  in.statics = RowMatrix::Zero(budget.statics, kStaticFeatures);
  in.static_valid.assign(static_cast<std::size_t>(budget.statics), 0);
  const int n_static = std::min(static_cast<int>(s.static_objects.size()), budget.statics);
  for (int i = 0; i < n_static; ++i) {
    const OrientedBox& b = s.static_objects[static_cast<std::size_t>(i)];
    const Point2 p = to_local(ego, {b.x, b.y});
    const double hh = b.heading - ego.heading;
    in.statics.row(i) << p.x / kPositionScale, p.y / kPositionScale, std::cos(hh), std::sin(hh),
        b.length / kSizeScale, b.width / kSizeScale;
    in.static_valid[static_cast<std::size_t>(i)] = 1;
  }

  if (s.expert_future) {
    std::vector<std::vector<AgentState>> tracks;
    for (int i = 0; i <= n_neighbors; ++i) {
      std::vector<AgentState> t;
      for (const auto& st : (*s.expert_future)[static_cast<std::size_t>(i)])
        t.push_back(to_model_state(ego, st));
      tracks.push_back(std::move(t));
    }
    in.target = flatten_states(tracks, slots);
  }
  return in;
}

Scenario recenter(const Scenario& s) {
  const Pose ego = s.ego_current().pose();
  Scenario out = s;
  auto point = [&](Point2 p) { return to_local(ego, p); };
  for (auto& lane : out.lanes)
    for (auto& p : lane) p = point(p);
  for (auto& p : out.route) p = point(p);
  for (auto& st : out.ego_history) st = to_model_state(ego, st);
  for (auto& a : out.agents)
    for (auto& st : a.history) st = to_model_state(ego, st);
  for (auto& b : out.static_objects) {
    const Point2 p = point({b.x, b.y});
    b.x = p.x;
    b.y = p.y;
    b.heading = wrap_angle(b.heading - ego.heading);
  }
  if (out.expert_future)
    for (auto& track : *out.expert_future)
      for (auto& st : track) st = to_model_state(ego, st);
  return out;
}

std::vector<std::vector<AgentState>> rows_to_world(const Pose& ego, const RowMatrix& flat) {
  const int steps = static_cast<int>(flat.cols()) / kStateDim;
  std::vector<std::vector<AgentState>> out(static_cast<std::size_t>(flat.rows()));
  for (Eigen::Index r = 0; r < flat.rows(); ++r) {
    auto& track = out[static_cast<std::size_t>(r)];
    for (int t = 0; t < steps; ++t) {
      AgentState m{flat(r, t * kStateDim), flat(r, t * kStateDim + 1),
                   std::atan2(flat(r, t * kStateDim + 3), flat(r, t * kStateDim + 2)), 0.0};
      track.push_back(to_world_state(ego, m));
    }
    for (int t = 0; t + 1 < steps; ++t) {
      auto& a = track[static_cast<std::size_t>(t)];
      const auto& b = track[static_cast<std::size_t>(t + 1)];
      a.speed = std::hypot(b.x - a.x, b.y - a.y) / kStepDt;
    }
    if (steps >= 2) track.back().speed = track[track.size() - 2].speed;
  }
  return out;
}

}  // namespace mdp
