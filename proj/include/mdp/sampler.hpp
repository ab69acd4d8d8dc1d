#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdp/checkpoint.hpp"
#include "mdp/model_frame.hpp"
#include "mdp/schedule.hpp"
#include "mdp/scene.hpp"
#include "mdp/trajectory.hpp"

namespace mdp {

enum class SolverOrder { first, second_multistep };

struct SamplerConfig {
  int n_steps = 15;
  SolverOrder order = SolverOrder::second_multistep;

  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);
};

/// Diffusion times of the n model evaluations: uniform in half-log-SNR from
/// t = T_diff down to t = 1. The solve ends at t = 0.
std::vector<double> time_grid(const DiffusionSchedule& sched, int n_steps);

/// Data prediction of the previous step, for the multistep update.
struct SolverHistory {
  std::optional<RowMatrix> x0_hat;
  double h = 0.0;
};

/// Scalar form of one update: x_next = rho x_i + c_new x0_hat + c_prev x0_prev.
struct StepCoefficients {
  double rho = 0.0;
  double c_new = 1.0;
  double c_prev = 0.0;
  double h = 0.0;  // half-log-SNR increment; infinite for the final step
};

StepCoefficients step_coefficients(const DiffusionSchedule& sched, const SolverHistory& hist, double t_i,
                                   double t_next, SolverOrder order);

/// One DPM-Solver++ update from t_i to t_next given the data prediction at
/// t_i. Falls back to first order without history; t_next = 0 returns the
/// data prediction.
RowMatrix solver_step(const DiffusionSchedule& sched, const RowMatrix& x_i, const RowMatrix& x0_hat,
                      SolverHistory& hist, double t_i, double t_next, SolverOrder order);

/// d(final sample)/d(head output) for denoiser calls at `times`, with the
/// head features held fixed.
std::vector<double> head_gains(const DiffusionSchedule& sched, const std::vector<double>& times, SolverOrder order,
                               double data_scale);

/// eps_hat(x_t, t) in normalised model space.
using EpsFn = std::function<RowMatrix(const RowMatrix& x_t, double t)>;

/// Integrates the probability-flow ODE from `x_T`, re-imposing the observed
/// step-0 columns `x_obs` after every update. `steps`, when given, receives
/// the state after each update.
RowMatrix integrate(const DiffusionSchedule& sched, const RowMatrix& x_T, const RowMatrix& x_obs, const EpsFn& eps,
                    const SamplerConfig& cfg, std::vector<RowMatrix>* steps = nullptr);

/// Per denoiser call of one sample: the ego features fed to the output head
/// and the gain d(final sample)/d(head output), holding the features fixed.
struct HeadTrace {
  std::vector<Eigen::RowVectorXd> features;  // [H] each
  std::vector<double> gain;
};

struct Plan {
  std::string scenario_id;
  int strategy = 0;
  TrajectoryTensor world;                         // [1, P, T+1, d_s], world frame
  std::vector<std::vector<AgentState>> states;    // populated agents, world frame
  RowMatrix model;                                // [P, kFlatDim], normalised model space
  std::vector<std::uint8_t> agent_valid;
};

/// A checkpoint bound to one scene; the scene encoding is computed once and
/// shared by every sample drawn from it. The checkpoint must outlive it.
class ScenePlanner {
 public:
  /// Throws IncompatibleCheckpoint if the scene does not fit the network.
  ScenePlanner(const Checkpoint& ckpt, const Scenario& scene);

  /// Throws InvalidStrategy.
  Plan sample(int s, const SamplerConfig& cfg, std::uint64_t seed, HeadTrace* trace = nullptr,
              std::vector<RowMatrix>* steps = nullptr) const;

  const ModelInput& input() const { return input_; }
  const RowMatrix& observed() const { return x_obs_; }
  const DiffusionSchedule& schedule() const { return sched_; }

 private:
  const Checkpoint& ckpt_;
  std::string id_;
  std::vector<AgentState> obs_world_;  // populated agents, slot order
  ModelInput input_;
  DiffusionSchedule sched_;
  RowMatrix x_obs_;  // normalised step-0 columns [P, d_s]
  nn::Mat<float> z_;
  nn::Mat<float> route_ctx_;
  nn::Mask token_valid_;
};

Plan sample(const Checkpoint& ckpt, const Scenario& scene, int s, const SamplerConfig& cfg, std::uint64_t seed);

/// {scenario_id, strategy, dt, states: [[[x, y, heading], ...] per agent]}
nlohmann::json plan_to_json(const Plan& plan);

}  // namespace mdp
