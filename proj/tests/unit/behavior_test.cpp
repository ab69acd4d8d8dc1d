#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <vector>

#include "mdp/behavior.hpp"
#include "mdp/errors.hpp"
#include "mdp/kinematics.hpp"
#include "test_util.hpp"

namespace mdp {
namespace {

std::vector<AgentState> straight_path(double v0, double a = 0.0, double y = 0.0) {
  std::vector<AgentState> out;
  for (int k = 0; k <= kFutureSteps; ++k) {
    const double t = k * kStepDt;
    out.push_back({v0 * t + 0.5 * a * t * t, y, 0.0, v0 + a * t});
  }
  return out;
}

std::vector<AgentState> stationary_path() {
  return std::vector<AgentState>(kFutureSteps + 1, AgentState{0.0, 0.0, 0.0, 0.0});
}

/// Neighbour parked at x on the ego lane.
Scenario road_with_parked_car(double x) {
  Scenario s = test::empty_road();
  AgentTrack car;
  for (int k = 0; k < kHistoryLen; ++k) car.history.push_back({x, 0.0, 0.0, 0.0});
  s.agents.push_back(car);
  return s;
}

TEST(Kinematics, UniformMotion) {
  const auto k = kinematics(positions(straight_path(10.0)), kStepDt);
  ASSERT_EQ(k.speeds.size(), static_cast<std::size_t>(kFutureSteps));
  ASSERT_EQ(k.accels.size(), static_cast<std::size_t>(kFutureSteps - 1));
  ASSERT_EQ(k.jerks.size(), static_cast<std::size_t>(kFutureSteps - 2));
  for (double v : k.speeds) EXPECT_NEAR(v, 10.0, 1e-12);
  for (double a : k.accels) EXPECT_NEAR(a, 0.0, 1e-12);
  for (double j : k.jerks) EXPECT_NEAR(j, 0.0, 1e-12);
}

TEST(Kinematics, ConstantAcceleration) {
  const auto k = kinematics(positions(straight_path(2.0, 1.0)), kStepDt);
  for (double a : k.accels) EXPECT_NEAR(a, 1.0, 1e-9);
  for (double j : k.jerks) EXPECT_NEAR(j, 0.0, 1e-9);
}

TEST(Kinematics, CircularArcCentripetal) {
  const double v = 10.0, R = 30.0;
  std::vector<Point2> pts;
  for (int k = 0; k <= kFutureSteps; ++k) {
    const double th = v * k * kStepDt / R;
    pts.push_back({R * std::sin(th), R * (1.0 - std::cos(th))});
  }
  const auto k = kinematics(pts, kStepDt);
  for (double a : k.accels) EXPECT_NEAR(a / (v * v / R), 1.0, 0.02);
}

TEST(Kinematics, TooShortThrows) {
  std::vector<Point2> pts{{0, 0}, {1, 0}, {2, 0}};
  EXPECT_THROW(kinematics(pts, kStepDt), TooShort);
}

TEST(Reward, StationaryIsZeroForComfort) {
  const Scenario s = test::empty_road();
  EXPECT_EQ(reward(stationary_path(), s, RewardSpec::for_strategy(3)), 0.0);
}

TEST(Reward, AggressivePrefersFaster) {
  const Scenario s = test::empty_road();
  const auto spec = RewardSpec::for_strategy(1);
  EXPECT_GT(reward(straight_path(12.0), s, spec), reward(straight_path(8.0), s, spec));
}

TEST(Reward, ConservativePenalisesSpeedAboveThreshold) {
  const Scenario s = test::empty_road();
  const auto spec = RewardSpec::for_strategy(2);
  EXPECT_EQ(reward(straight_path(9.0), s, spec), reward(straight_path(6.0), s, spec));
  EXPECT_LT(reward(straight_path(14.0), s, spec), reward(straight_path(9.0), s, spec));
}

TEST(Reward, CollisionCostsExactlyThePenalty) {
  const auto path = straight_path(10.0);
  const Scenario clear = test::empty_road();
  const Scenario blocked = road_with_parked_car(25.0);
  ASSERT_TRUE(collision_proxy(path, blocked));
  ASSERT_FALSE(collision_proxy(path, clear));
  for (int s : {1, 3}) {
    const auto spec = RewardSpec::for_strategy(s);
    EXPECT_NEAR(reward(path, blocked, spec) - reward(path, clear, spec), spec.collision_penalty, 1e-12) << s;
  }
}

TEST(Reward, TranslationInvariant) {
  const Scenario base = road_with_parked_car(60.0);
  const auto path = straight_path(9.0, 0.5, 0.3);
  const double dx = 1234.5, dy = -987.25;
  Scenario moved = base;
  for (auto& lane : moved.lanes)
    for (auto& p : lane) p = {p.x + dx, p.y + dy};
  for (auto& p : moved.route) p = {p.x + dx, p.y + dy};
  for (auto& h : moved.ego_history) h.x += dx, h.y += dy;
  for (auto& a : moved.agents)
    for (auto& h : a.history) h.x += dx, h.y += dy;
  auto moved_path = path;
  for (auto& p : moved_path) p.x += dx, p.y += dy;
  for (int s : {1, 2, 3}) {
    const auto spec = RewardSpec::for_strategy(s);
    EXPECT_NEAR(reward(path, base, spec), reward(moved_path, moved, spec), 1e-9) << s;
  }
}

TEST(Reward, MoreJerkLowersComfort) {
  const Scenario s = test::empty_road();
  const auto spec = RewardSpec::for_strategy(3);
  double prev = 1.0;
  for (double amp : {0.0, 0.2, 0.4, 0.8}) {
    auto path = straight_path(8.0);
    for (std::size_t k = 0; k < path.size(); ++k) path[k].x += amp * ((k % 2 == 0) ? 1.0 : -1.0) * kStepDt;
    const double r = reward(path, s, spec);
    EXPECT_LT(r, prev);
    prev = r;
  }
}

TEST(Reward, BaseAndUnknownStrategiesHaveNoReward) {
  EXPECT_THROW(RewardSpec::for_strategy(0), InvalidStrategy);
  EXPECT_THROW(RewardSpec::for_strategy(7), InvalidStrategy);
  const auto spec = RewardSpec::for_strategy(1);
  EXPECT_LE(spec.collision_penalty, 0.0);
}

TEST(Reward, HeadwayMarginRewardsDistanceToLeader) {
  const auto spec = RewardSpec::for_strategy(2);
  const auto path = straight_path(8.0);
  EXPECT_GT(reward(path, road_with_parked_car(200.0), spec), reward(path, road_with_parked_car(50.0), spec));
  EXPECT_EQ(min_headway_margin(path, test::empty_road(), spec.headway), 1.0);
}

TEST(SpeedBins, OneOfEach) {
  const SpeedBins b = speed_bins({2.0, 6.0, 20.0});
  EXPECT_NEAR(b.low, 100.0 / 3.0, 1e-9);
  EXPECT_NEAR(b.mid, 100.0 / 3.0, 1e-9);
  EXPECT_NEAR(b.high, 100.0 / 3.0, 1e-9);
}

TEST(SpeedBins, AllZeroIsLow) {
  const SpeedBins b = speed_bins(std::vector<double>(40, 0.0));
  EXPECT_EQ(b.low, 100.0);
  EXPECT_EQ(b.mid, 0.0);
  EXPECT_EQ(b.high, 0.0);
}

TEST(SpeedBins, EdgesAndPartition) {
  std::vector<double> v;
  for (double x = 0.0; x <= 30.0; x += 0.37) v.push_back(x);
  v.push_back(kLowSpeed);
  v.push_back(kHighSpeed);
  const SpeedBins b = speed_bins(v);
  EXPECT_NEAR(b.low + b.mid + b.high, 100.0, 1e-9);
  const SpeedBins edges = speed_bins({kLowSpeed, kHighSpeed});
  EXPECT_EQ(edges.mid, 100.0);
}

TEST(OpenLoop, StatsPoolEveryStep) {
  const auto row = open_loop_stats({stationary_path(), straight_path(10.0)}, 1);
  EXPECT_NEAR(row.mean_velocity, 5.0, 1e-12);
  EXPECT_NEAR(row.bins.low, 50.0, 1e-9);
  EXPECT_NEAR(row.bins.mid, 50.0, 1e-9);
  EXPECT_EQ(row.scenarios, 2);
  const std::string table = format_open_loop_table({row});
  EXPECT_NE(table.find("Velocity"), std::string::npos);
  EXPECT_NE(table.find("aggressive"), std::string::npos);
}

TEST(OpenLoop, CsvHasOneRowPerStrategy) {
  const auto dir = test::scratch_dir("open_loop_csv");
  std::vector<OpenLoopRow> rows;
  for (int s = 0; s < 4; ++s) rows.push_back(open_loop_stats({straight_path(4.0 + s)}, s));
  write_open_loop_csv(rows, dir / "r.csv");
  std::ifstream in(dir / "r.csv");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 5);
}

TEST(Displacement, StraightLineBaseline) {
  const Scenario s = test::empty_road(8.0);
  const auto cv = straight_line_future(s);
  ASSERT_EQ(cv.size(), static_cast<std::size_t>(kFutureSteps + 1));
  EXPECT_NEAR(cv.back().x, 8.0 * kFutureSteps * kStepDt, 1e-9);
  EXPECT_NEAR(average_displacement(cv, straight_path(8.0)), 0.0, 1e-9);
}

}  // namespace
}  // namespace mdp
