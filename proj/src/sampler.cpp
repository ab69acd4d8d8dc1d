#include "mdp/sampler.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "mdp/denoiser.hpp"
#include "mdp/errors.hpp"
#include "mdp/strategy.hpp"

namespace mdp {

nlohmann::json SamplerConfig::to_json() const {
  return {{"n_steps", n_steps}, {"order", order == SolverOrder::first ? "first" : "second_multistep"}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.n_steps = j.value("n_steps", c.n_steps);
  const std::string o = j.value("order", std::string("second_multistep"));
  if (o == "first")
    c.order = SolverOrder::first;
  else if (o == "second_multistep")
    c.order = SolverOrder::second_multistep;
  else
    throw Error("unknown solver order '" + o + "'");
  if (c.n_steps < 1) throw Error("n_steps must be at least 1");
  return c;
}

std::vector<double> time_grid(const DiffusionSchedule& sched, int n_steps) {
  if (n_steps < 1) throw Error("n_steps must be at least 1");
  const double t_max = sched.T();
  std::vector<double> ts{t_max};
  if (n_steps == 1) return ts;
  const double l0 = sched.lambda(t_max);
  const double l1 = sched.lambda(std::min(1.0, t_max));
  for (int k = 1; k < n_steps; ++k) {
    const double lam = l0 + (l1 - l0) * k / (n_steps - 1);
    ts.push_back(k == n_steps - 1 ? std::min(1.0, t_max) : sched.t_of_lambda(lam));
  }
  return ts;
}

StepCoefficients step_coefficients(const DiffusionSchedule& sched, const SolverHistory& hist, double t_i,
                                   double t_next, SolverOrder order) {
  StepCoefficients c;
  const double sigma_next = t_next > 0.0 ? sched.noise(t_next) : 0.0;
  if (sigma_next == 0.0) {
    c.h = std::numeric_limits<double>::infinity();
    return c;
  }
  c.h = sched.lambda(t_next) - sched.lambda(t_i);
  c.rho = sigma_next / sched.noise(t_i);
  const double g = -sched.signal(t_next) * std::expm1(-c.h);
  c.c_new = g;
  if (order == SolverOrder::second_multistep && hist.x0_hat) {
    const double r = hist.h / c.h;
    c.c_new = g * (1.0 + 1.0 / (2.0 * r));
    c.c_prev = -g / (2.0 * r);
  }
  return c;
}

RowMatrix solver_step(const DiffusionSchedule& sched, const RowMatrix& x_i, const RowMatrix& x0_hat,
                      SolverHistory& hist, double t_i, double t_next, SolverOrder order) {
  const StepCoefficients c = step_coefficients(sched, hist, t_i, t_next, order);
  RowMatrix x_next = c.c_new * x0_hat;
  if (c.rho != 0.0) x_next += c.rho * x_i;
  if (c.c_prev != 0.0) x_next += c.c_prev * *hist.x0_hat;
  hist.x0_hat = x0_hat;
  hist.h = c.h;
  return x_next;
}

RowMatrix integrate(const DiffusionSchedule& sched, const RowMatrix& x_T, const RowMatrix& x_obs, const EpsFn& eps,
                    const SamplerConfig& cfg, std::vector<RowMatrix>* steps) {
  const auto obs_cols = x_obs.cols();
  const std::vector<double> grid = time_grid(sched, cfg.n_steps);
  RowMatrix x = x_T;
  x.leftCols(obs_cols) = x_obs;
  if (steps) steps->push_back(x);
  SolverHistory hist;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double t = grid[k];
    const double t_next = k + 1 < grid.size() ? grid[k + 1] : 0.0;
    const RowMatrix e = eps(x, t);
    const RowMatrix x0 = (x - sched.noise(t) * e) / sched.signal(t);
    x = solver_step(sched, x, x0, hist, t, t_next, cfg.order);
    x.leftCols(obs_cols) = x_obs;
    if (steps) steps->push_back(x);
  }
  return x;
}

std::vector<double> head_gains(const DiffusionSchedule& sched, const std::vector<double>& times, SolverOrder order,
                               double data_scale) {
  const std::size_t n = times.size();
  std::vector<double> dx(n, 0.0), dprev(n, 0.0), dx0(n, 0.0);
  SolverHistory hist;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = times[k];
    const double t_next = k + 1 < n ? times[k + 1] : 0.0;
    const double sig = sched.signal(t), noi = sched.noise(t);
    const NoiseCoefficients nc = noise_coefficients(sig, noi, data_scale);
    const double through_x = (1.0 - noi * nc.skip) / sig;
    for (std::size_t j = 0; j < k; ++j) dx0[j] = through_x * dx[j];
    dx0[k] = -noi * nc.out / sig;
    const StepCoefficients c = step_coefficients(sched, hist, t, t_next, order);
    for (std::size_t j = 0; j <= k; ++j) dx[j] = c.rho * dx[j] + c.c_new * dx0[j] + c.c_prev * dprev[j];
    dprev = dx0;
    hist.x0_hat = RowMatrix();
    hist.h = c.h;
  }
  return dx;
}

ScenePlanner::ScenePlanner(const Checkpoint& ckpt, const Scenario& scene)
    : ckpt_(ckpt), id_(scene.id), sched_(make_schedule(ckpt.schedule)) {
  try {
    input_ = to_model_frame(scene, ckpt.config.budget);
    if (input_.history != ckpt.config.history) throw ShapeMismatch("history length differs from the checkpoint");
    nn::Tape<float> tape(false);
    const auto net = ckpt.denoiser();
    const auto enc = net.encode(tape, scene_tokens<float>(input_));
    z_ = tape.value(enc.z);
    route_ctx_ = tape.value(enc.route_ctx);
    token_valid_ = enc.token_valid;
  } catch (const ShapeMismatch& e) {
    throw IncompatibleCheckpoint(std::string("scene does not fit the checkpoint: ") + e.what());
  }
  x_obs_ = ckpt.normalizer.normalize(input_.current);
  for (std::size_t r = 0; r < input_.agent_valid.size(); ++r)
    if (!input_.agent_valid[r]) x_obs_.row(static_cast<Eigen::Index>(r)).setZero();
  obs_world_.push_back(scene.ego_current());
  for (std::size_t i = 0; i + 1 < input_.agent_valid.size() && i < scene.agents.size(); ++i)
    obs_world_.push_back(scene.agents[i].history.back());
}

Plan ScenePlanner::sample(int s, const SamplerConfig& cfg, std::uint64_t seed, HeadTrace* trace,
                          std::vector<RowMatrix>* steps) const {
  check_strategy(s, ckpt_.config.heads);
  const int P = ckpt_.config.budget.agents;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix x_T(P, kFlatDim);
  for (Eigen::Index i = 0; i < x_T.size(); ++i) x_T.data()[i] = normal(rng);

  const auto net = ckpt_.denoiser();
  std::vector<double> call_times;
  auto eps = [&](const RowMatrix& x_t, double t) {
    nn::Tape<float> tape(false);
    typename Denoiser<float>::Encoded enc{tape.constant(z_), token_valid_, input_.agent_valid,
                                          tape.constant(route_ctx_)};
    const auto xv = tape.constant(x_t.cast<float>());
    const auto feats = net.features(tape, enc, xv, static_cast<float>(t / sched_.T()), s);
    const auto out = net.noise_from_head(tape, xv, net.head(tape, feats, s), static_cast<float>(sched_.signal(t)),
                                         static_cast<float>(sched_.noise(t)));
    if (trace) {
      trace->features.push_back(tape.value(feats).row(0).cast<double>());
      call_times.push_back(t);
    }
    return RowMatrix(tape.value(out).cast<double>());
  };

  Plan plan;
  plan.scenario_id = id_;
  plan.strategy = s;
  plan.agent_valid = input_.agent_valid;
  plan.model = integrate(sched_, x_T, x_obs_, eps, cfg, steps);
  if (trace) trace->gain = head_gains(sched_, call_times, cfg.order, ckpt_.config.data_scale);

  RowMatrix phys = ckpt_.normalizer.denormalize(plan.model);
  for (Eigen::Index r = 0; r < phys.rows(); ++r)
    for (int t = 0; t <= kFutureSteps; ++t) {
      const double c = phys(r, t * kStateDim + 2);
      const double sn = phys(r, t * kStateDim + 3);
      const double n = std::hypot(c, sn);
      if (n > 0.0) {
        phys(r, t * kStateDim + 2) = c / n;
        phys(r, t * kStateDim + 3) = sn / n;
      } else {
        phys(r, t * kStateDim + 2) = 1.0;
        phys(r, t * kStateDim + 3) = 0.0;
      }
    }
  auto tracks = rows_to_world(input_.ego_pose, phys);
  plan.world = TrajectoryTensor(1, P, kFutureSteps + 1);
  for (std::size_t p = 0; p < obs_world_.size(); ++p) {
    auto& track = tracks[p];
    track[0] = obs_world_[p];
    for (int t = 0; t <= kFutureSteps; ++t) {
      const AgentState& st = track[static_cast<std::size_t>(t)];
      const int pi = static_cast<int>(p);
      plan.world.at(0, pi, t, 0) = st.x;
      plan.world.at(0, pi, t, 1) = st.y;
      plan.world.at(0, pi, t, 2) = std::cos(st.heading);
      plan.world.at(0, pi, t, 3) = std::sin(st.heading);
    }
    plan.states.push_back(std::move(track));
  }
  return plan;
}

Plan sample(const Checkpoint& ckpt, const Scenario& scene, int s, const SamplerConfig& cfg, std::uint64_t seed) {
  return ScenePlanner(ckpt, scene).sample(s, cfg, seed);
}

nlohmann::json plan_to_json(const Plan& plan) {
  nlohmann::json states = nlohmann::json::array();
  for (const auto& track : plan.states) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : track) a.push_back({s.x, s.y, s.heading});
    states.push_back(std::move(a));
  }
  return {{"scenario_id", plan.scenario_id},
          {"strategy", strategy_name(plan.strategy)},
          {"dt", kStepDt},
          {"states", std::move(states)}};
}

}  // namespace mdp
