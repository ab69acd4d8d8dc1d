#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdp/checkpoint.hpp"
#include "mdp/sampler.hpp"
#include "mdp/scenario_gen.hpp"
#include "mdp/scene.hpp"

namespace mdp {

inline constexpr double kTickDt = 0.05;       // 20 Hz
inline constexpr int kTicksPerReplan = 10;    // 0.5 s planning cycle
inline constexpr int kTicksPerSample = 5;     // 0.25 s
inline constexpr double kCorridorTolerance = 0.25;
inline constexpr double kComfortAccel = 4.0;
inline constexpr double kComfortJerk = 10.0;

enum class TrafficMode { reactive, non_reactive };
TrafficMode parse_traffic_mode(const std::string& name);
std::string to_string(TrafficMode mode);

struct PlanRequest {
  const Scenario& scene;  // snapshot: histories end at the current tick
  int strategy = 0;
  std::uint64_t seed = 0;
  double time = 0.0;
};

/// Produces an ego trajectory of kFutureSteps + 1 world-frame states at
/// kStepDt spacing whose first state is the current one.
class EgoPlanner {
 public:
  virtual ~EgoPlanner() = default;
  virtual std::vector<AgentState> plan(const PlanRequest& req) = 0;
};

class DiffusionPlanner : public EgoPlanner {
 public:
  DiffusionPlanner(const Checkpoint& ckpt, SamplerConfig cfg) : ckpt_(ckpt), cfg_(cfg) {}
  std::vector<AgentState> plan(const PlanRequest& req) override;

 private:
  const Checkpoint& ckpt_;
  SamplerConfig cfg_;
};

/// IDM along the route with a critically damped lateral approach to the
/// route centreline; the rule-based reference driver.
class ExpertPlanner : public EgoPlanner {
 public:
  explicit ExpertPlanner(IdmParams idm = {}) : idm_(idm) {}
  std::vector<AgentState> plan(const PlanRequest& req) override;

 private:
  IdmParams idm_;
};

/// Holds the current pose.
class StationaryPlanner : public EgoPlanner {
 public:
  std::vector<AgentState> plan(const PlanRequest& req) override;
};

/// Plays the logged expert ego future while it lasts, then drives as
/// ExpertPlanner.
class ExpertReplayPlanner : public EgoPlanner {
 public:
  explicit ExpertReplayPlanner(const Scenario& scene) : scene_(scene) {}
  std::vector<AgentState> plan(const PlanRequest& req) override;

 private:
  const Scenario& scene_;
  ExpertPlanner fallback_;
};

/// Steers onto the first neighbour's extrapolated position.
class CollisionStubPlanner : public EgoPlanner {
 public:
  std::vector<AgentState> plan(const PlanRequest& req) override;
};

struct StrategyCommand {
  double time = 0.0;
  int strategy = 0;
};

struct EpisodeConfig {
  int strategy = 0;
  double horizon_s = 15.0;
  TrafficMode mode = TrafficMode::reactive;
  std::uint64_t seed = 0;
  std::vector<StrategyCommand> strategy_feed;  // applied at the next replan boundary
};

struct EpisodeScore {
  double composite = 0.0;
  bool collision = false;  // at-fault collision occurred
  bool off_corridor = false;
  bool planner_failure = false;
  double progress = 0.0;
  double comfort = 0.0;
  double ego_progress_m = 0.0;
  double reference_progress_m = 0.0;

  bool hard_fail() const { return collision || off_corridor || planner_failure; }
  nlohmann::json to_json() const;
};

/// composite = 0 on a hard fail, else 100 (0.6 progress + 0.4 comfort).
double composite_score(bool hard_fail, double progress, double comfort);

struct TickRecord {
  int tick = 0;
  double t = 0.0;
  AgentState ego;
  double ego_accel = 0.0;
  std::vector<AgentState> agents;
  int strategy = 0;
  bool replanned = false;
  std::vector<AgentState> plan;  // active plan
  std::vector<std::string> events;

  nlohmann::json to_json() const;
};

struct WorldAgent {
  AgentState state;
  int lane = 0;
  double s = 0.0;  // arc length along its lane
  double d = 0.0;  // lateral offset from its lane
  double v0 = 0.0;
  double accel = 0.0;
};

/// World at one tick.
struct WorldState {
  int tick = 0;
  double time = 0.0;
  AgentState ego;
  double ego_accel = 0.0;
  std::vector<WorldAgent> agents;
};

/// A steppable closed-loop episode. Replans happen on ticks that are
/// multiples of kTicksPerReplan; strategy changes wait for the next one.
class Episode {
 public:
  Episode(EgoPlanner& planner, const Scenario& scene, EpisodeConfig cfg);

  bool done() const { return world_.tick >= total_ticks_; }
  /// Advances one tick (replanning first when on a boundary) and returns
  /// the record of the new state.
  const TickRecord& step();
  void run();

  /// Queues a strategy for the next replan boundary.
  void request_strategy(int s);
  int active_strategy() const { return active_; }
  const WorldState& world() const { return world_; }
  const std::vector<TickRecord>& trace() const { return trace_; }
  const std::vector<AgentState>& current_plan() const { return plan_; }
  const Scenario& scene() const { return scene_; }

  /// Scores the trace against a reference progress distance (m).
  EpisodeScore score(double reference_progress_m) const;
  double ego_progress() const;

 private:
  void replan();
  void step_agents();
  void move_ego();
  void check_events(TickRecord& rec);
  Scenario snapshot() const;

  EgoPlanner& planner_;
  Scenario scene_;
  EpisodeConfig cfg_;
  PolylineFrame route_;
  std::vector<PolylineFrame> lanes_;
  int total_ticks_ = 0;
  WorldState world_;
  int active_ = 0;
  std::optional<int> pending_;
  std::size_t feed_pos_ = 0;
  int replans_ = 0;
  std::vector<AgentState> plan_;
  int plan_tick_ = 0;
  std::vector<std::vector<AgentState>> agent_samples_;  // 0.25 s history per agent
  std::vector<AgentState> ego_samples_;
  std::vector<TickRecord> trace_;
  bool collision_ = false;
  bool off_corridor_ = false;
  bool failure_ = false;
};

/// Separating-axis overlap test of two oriented rectangles.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

/// False when `other` sits behind the ego within its lane width, i.e. it ran
/// into the ego from behind.
bool ego_at_fault(const AgentState& ego, const AgentState& other);

/// IDM acceleration of world agent i; the ego acts as a potential leader
/// when `ego_leads` is set.
double agent_acceleration(const WorldState& w, const std::vector<PolylineFrame>& lanes, std::size_t i,
                          bool ego_leads, const IdmParams& idm);

/// Route progress of the rule-based reference driver on the same scene.
double reference_progress(const Scenario& scene, const EpisodeConfig& cfg);

struct EpisodeResult {
  std::string scenario_id;
  EpisodeScore score;
  std::vector<TickRecord> trace;
};

EpisodeResult run_episode(EgoPlanner& planner, const Scenario& scene, const EpisodeConfig& cfg);

void write_trace_jsonl(const std::vector<TickRecord>& trace, const std::filesystem::path& path);

struct SuiteResult {
  double mean_composite = 0.0;
  double collision_free_rate = 0.0;
  double corridor_rate = 0.0;
  double mean_progress = 0.0;
  double mean_comfort = 0.0;
  std::vector<EpisodeResult> episodes;
};

/// Scenario i runs with seed (seed + i). With `out_dir` set, per-scenario
/// JSON results and a summary CSV are written there.
SuiteResult score_suite(EgoPlanner& planner, const std::vector<Scenario>& corpus, int s, int n,
                        const EpisodeConfig& base, const std::optional<std::filesystem::path>& out_dir = {});

}  // namespace mdp
