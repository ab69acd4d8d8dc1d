#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdp/closed_loop.hpp"
#include "mdp/errors.hpp"
#include "mdp/scenario_gen.hpp"
#include "test_util.hpp"

namespace mdp {
namespace {

Scenario road_with_car(double x, double speed) {
  Scenario s = test::empty_road();
  AgentTrack car;
  for (int k = 0; k < kHistoryLen; ++k)
    car.history.push_back({x + speed * kStepDt * (k - (kHistoryLen - 1)), 0.0, 0.0, speed});
  s.agents.push_back(car);
  return s;
}

class ThrowingPlanner : public EgoPlanner {
 public:
  std::vector<AgentState> plan(const PlanRequest&) override { throw std::runtime_error("boom"); }
};

/// Follower gap after closing on a stopped leader, integrated at step dt.
struct FollowResult {
  double min_gap = 1e9;
  double final_gap = 0.0;
};

FollowResult follow_stopped_leader(double dt, double horizon) {
  Polyline line;
  for (double x = -50.0; x <= 400.0; x += 5.0) line.push_back({x, 0.0});
  const std::vector<PolylineFrame> lanes{PolylineFrame(line)};
  const IdmParams idm;
  WorldState w;
  WorldAgent leader;
  leader.state = {100.0 + kVehicleLength, 0.0, 0.0, 0.0};
  leader.s = lanes[0].project({leader.state.x, 0.0}).s;
  leader.v0 = idm.v0;
  WorldAgent follower;
  follower.state = {0.0, 0.0, 0.0, idm.v0};
  follower.s = lanes[0].project({0.0, 0.0}).s;
  follower.v0 = idm.v0;
  w.agents = {leader, follower};
  w.ego = {-1000.0, 50.0, 0.0, 0.0};

  FollowResult r;
  const int n = static_cast<int>(std::llround(horizon / dt));
  for (int i = 0; i < n; ++i) {
    WorldAgent& f = w.agents[1];
    const double a = agent_acceleration(w, lanes, 1, false, idm);
    f.state.speed = std::max(0.0, f.state.speed + a * dt);
    f.s += f.state.speed * dt;
    f.state.x = lanes[0].to_world(f.s, 0.0).x;
    r.min_gap = std::min(r.min_gap, w.agents[0].s - f.s - kVehicleLength);
  }
  r.final_gap = w.agents[0].s - w.agents[1].s - kVehicleLength;
  return r;
}

TEST(Idm, FixedPointAndStandingStart) {
  const IdmParams p;
  EXPECT_NEAR(idm_acceleration(p, p.v0, std::nullopt), 0.0, 1e-9);
  EXPECT_NEAR(idm_acceleration(p, 0.0, std::nullopt), p.a_max, 1e-12);
}

TEST(Idm, FollowerStopsBehindStoppedLeader) {
  const IdmParams idm;
  const FollowResult coarse = follow_stopped_leader(kTickDt, 60.0);
  const FollowResult fine = follow_stopped_leader(0.001, 60.0);
  EXPECT_GE(coarse.min_gap, 0.9 * idm.s0);
  EXPECT_GE(fine.min_gap, 0.9 * idm.s0);
  EXPECT_NEAR(coarse.final_gap, fine.final_gap, 0.25);
}

TEST(Geometry, BoxOverlap) {
  const OrientedBox a{0.0, 0.0, 0.0, 4.0, 2.0};
  EXPECT_TRUE(boxes_overlap(a, {3.9, 0.0, 0.0, 4.0, 2.0}));
  EXPECT_FALSE(boxes_overlap(a, {4.1, 0.0, 0.0, 4.0, 2.0}));
  EXPECT_FALSE(boxes_overlap(a, {0.0, 2.1, 0.0, 4.0, 2.0}));
  // A diagonal box clears the corner region that axis-aligned bounds would hit.
  const double q = std::numbers::pi / 4.0;
  EXPECT_FALSE(boxes_overlap(a, {3.6, 2.6, q, 2.0, 2.0}));
  EXPECT_TRUE(boxes_overlap(a, {2.5, 1.5, q, 2.0, 2.0}));
}

TEST(Geometry, RearEndIsNotEgoFault) {
  const AgentState ego{0.0, 0.0, 0.0, 5.0};
  EXPECT_FALSE(ego_at_fault(ego, {-3.0, 0.2, 0.0, 9.0}));
  EXPECT_TRUE(ego_at_fault(ego, {3.0, 0.2, 0.0, 1.0}));
  EXPECT_TRUE(ego_at_fault(ego, {-1.0, 2.5, 0.0, 1.0}));
}

TEST(Score, CompositeFormulaAndBounds) {
  EXPECT_EQ(composite_score(true, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(composite_score(false, 1.0, 1.0), 100.0);
  EXPECT_DOUBLE_EQ(composite_score(false, 0.0, 1.0), 40.0);
  EXPECT_DOUBLE_EQ(composite_score(false, 0.5, 0.25), 40.0);
  EXPECT_DOUBLE_EQ(composite_score(false, 2.0, -1.0), 60.0);
}

TEST(Episode, StationaryEgoScoresForty) {
  StationaryPlanner planner;
  const auto r = run_episode(planner, test::empty_road(), {});
  EXPECT_FALSE(r.score.hard_fail());
  EXPECT_GT(r.score.reference_progress_m, 50.0);
  EXPECT_NEAR(r.score.progress, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.score.comfort, 1.0);
  EXPECT_DOUBLE_EQ(r.score.composite, 40.0);
}

TEST(Episode, TicksAreExactAndTraceIsComplete) {
  ExpertPlanner planner;
  EpisodeConfig cfg;
  cfg.horizon_s = 3.0;
  Episode ep(planner, test::empty_road(), cfg);
  ep.run();
  EXPECT_EQ(ep.world().tick, 60);
  EXPECT_EQ(ep.world().time, 60 * kTickDt);
  const auto& tr = ep.trace();
  ASSERT_EQ(tr.size(), 61u);
  int replans = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    EXPECT_EQ(tr[i].tick, static_cast<int>(i));
    EXPECT_EQ(tr[i].t, static_cast<double>(i) * kTickDt);
    if (tr[i].replanned) {
      EXPECT_EQ(tr[i].tick % kTicksPerReplan, 0);
      ++replans;
    }
  }
  EXPECT_EQ(replans, 6);
  EXPECT_THROW(ep.step(), Error);
}

TEST(Episode, ExpertDrivesCleanlyOnEmptyRoad) {
  ExpertPlanner planner;
  const auto r = run_episode(planner, test::empty_road(), {});
  EXPECT_FALSE(r.score.hard_fail());
  EXPECT_DOUBLE_EQ(r.score.progress, 1.0);
  EXPECT_GT(r.score.composite, 95.0);
}

TEST(Episode, CollisionStubAlwaysScoresZero) {
  CollisionStubPlanner planner;
  double total = 0.0;
  for (double x : {15.0, 25.0, 40.0}) {
    const auto r = run_episode(planner, road_with_car(x, 2.0), {});
    EXPECT_TRUE(r.score.collision) << x;
    total += r.score.composite;
  }
  EXPECT_EQ(total, 0.0);
}

TEST(Episode, PlannerFailureScoresZero) {
  ThrowingPlanner planner;
  const auto r = run_episode(planner, test::empty_road(), {});
  EXPECT_TRUE(r.score.planner_failure);
  EXPECT_EQ(r.score.composite, 0.0);
}

TEST(Episode, ExpertReplayScoresHigh) {
  const auto corpus = generate_scenarios(21, 10, ScenarioKind::mixed);
  double total = 0.0;
  for (const auto& s : corpus) {
    ExpertReplayPlanner planner(s);
    EpisodeConfig cfg;
    cfg.mode = TrafficMode::non_reactive;
    const auto r = run_episode(planner, s, cfg);
    EXPECT_FALSE(r.score.collision) << s.id;
    total += r.score.composite;
  }
  EXPECT_GE(total / static_cast<double>(corpus.size()), 95.0);
}

TEST(Episode, StrategyFeedAppliesAtNextReplan) {
  ExpertPlanner planner;
  EpisodeConfig cfg;
  cfg.horizon_s = 8.0;
  cfg.strategy_feed = {{5.0, 2}, {4.8, 1}};
  const auto r = run_episode(planner, test::empty_road(), cfg);
  bool saw_switch = false;
  for (const auto& rec : r.trace) {
    if (!rec.replanned) continue;
    if (rec.t < 4.5) EXPECT_EQ(rec.strategy, 0) << rec.t;
    if (rec.t >= 5.0) {
      EXPECT_EQ(rec.strategy, 2) << rec.t;
      saw_switch = true;
    }
  }
  EXPECT_TRUE(saw_switch);
}

TEST(Episode, RequestedStrategyWaitsForBoundary) {
  ExpertPlanner planner;
  Episode ep(planner, test::empty_road(), {});
  for (int i = 0; i < 3; ++i) ep.step();
  ep.request_strategy(3);
  EXPECT_EQ(ep.active_strategy(), 0);
  while (ep.world().tick < kTicksPerReplan) ep.step();
  EXPECT_EQ(ep.active_strategy(), 0);
  ep.step();
  EXPECT_EQ(ep.active_strategy(), 3);
  EXPECT_THROW(ep.request_strategy(9), InvalidStrategy);
}

TEST(Episode, RejectsBadConfig) {
  ExpertPlanner planner;
  EpisodeConfig cfg;
  cfg.horizon_s = 0.0;
  EXPECT_THROW(Episode(planner, test::empty_road(), cfg), Error);
  cfg = {};
  cfg.strategy = 5;
  EXPECT_THROW(Episode(planner, test::empty_road(), cfg), InvalidStrategy);
}

TEST(Episode, DiffusionPlannerIsDeterministic) {
  const auto corpus = generate_scenarios(3, 4, ScenarioKind::mixed);
  const Checkpoint ck = test::tiny_checkpoint(corpus);
  SamplerConfig sc;
  sc.n_steps = 3;
  EpisodeConfig cfg;
  cfg.horizon_s = 2.0;
  cfg.seed = 17;
  auto dump = [&] {
    DiffusionPlanner planner(ck, sc);
    const auto r = run_episode(planner, corpus[0], cfg);
    std::string out;
    for (const auto& rec : r.trace) out += rec.to_json().dump() + "\n";
    return out + r.score.to_json().dump();
  };
  EXPECT_EQ(dump(), dump());
}

TEST(Episode, TraceJsonlOneLinePerTick) {
  ExpertPlanner planner;
  EpisodeConfig cfg;
  cfg.horizon_s = 2.0;
  const auto r = run_episode(planner, road_with_car(40.0, 6.0), cfg);
  const auto dir = test::scratch_dir("trace_jsonl");
  write_trace_jsonl(r.trace, dir / "t.jsonl");
  std::ifstream in(dir / "t.jsonl");
  std::string line;
  int n = 0;
  double last_t = -1.0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_GT(j.at("t").get<double>(), last_t);
    last_t = j.at("t").get<double>();
    EXPECT_EQ(j.at("agents").size(), 1u);
    EXPECT_EQ(j.contains("plan"), j.at("replan").get<bool>());
    ++n;
  }
  EXPECT_EQ(n, 41);
}

TEST(Suite, WritesSummaryAndAverages) {
  const auto corpus = generate_scenarios(4, 3, ScenarioKind::mixed);
  StationaryPlanner planner;
  EpisodeConfig cfg;
  cfg.horizon_s = 2.0;
  const auto dir = test::scratch_dir("suite");
  const auto res = score_suite(planner, corpus, 0, 3, cfg, dir);
  ASSERT_EQ(res.episodes.size(), 3u);
  double mean = 0.0;
  for (const auto& e : res.episodes) mean += e.score.composite / 3.0;
  EXPECT_NEAR(res.mean_composite, mean, 1e-12);
  EXPECT_TRUE(std::filesystem::exists(dir / "summary.csv"));
  EXPECT_THROW(score_suite(planner, corpus, 0, 4, cfg), Error);
}

TEST(TrafficModeNames, RoundTrip) {
  for (auto m : {TrafficMode::reactive, TrafficMode::non_reactive}) EXPECT_EQ(parse_traffic_mode(to_string(m)), m);
  EXPECT_THROW(parse_traffic_mode("chaotic"), Error);
}

}  // namespace
}  // namespace mdp
