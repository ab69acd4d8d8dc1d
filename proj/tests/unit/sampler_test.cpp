#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mdp/denoiser.hpp"
#include "mdp/errors.hpp"
#include "mdp/sampler.hpp"
#include "mdp/scenario_gen.hpp"
#include "test_util.hpp"

namespace mdp {
namespace {

RowMatrix gaussian(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

DiffusionSchedule pipeline() { return make_schedule(test::pipeline_schedule()); }

TEST(Sampler, OracleSingleStepRecoversCleanSample) {
  const auto sched = pipeline();
  const RowMatrix x0 = gaussian(3, kFlatDim, 1);
  const RowMatrix eps = gaussian(3, kFlatDim, 2);
  const RowMatrix x_T = add_noise(sched, x0, sched.T(), eps, false);
  SamplerConfig cfg;
  cfg.n_steps = 1;
  const RowMatrix out =
      integrate(sched, x_T, x0.leftCols(kStateDim), [&](const RowMatrix&, double) { return eps; }, cfg);
  EXPECT_LT((out - x0).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Sampler, ConsistentOracleIsExactAtAnyStepCount) {
  const auto sched = pipeline();
  const RowMatrix x0 = gaussian(2, kFlatDim, 3);
  auto oracle = [&](const RowMatrix& x, double t) {
    return RowMatrix((x - sched.signal(t) * x0) / sched.noise(t));
  };
  for (int n : {2, 5, 15}) {
    for (auto order : {SolverOrder::first, SolverOrder::second_multistep}) {
      SamplerConfig cfg{n, order};
      const RowMatrix out = integrate(sched, gaussian(2, kFlatDim, 4), x0.leftCols(kStateDim), oracle, cfg);
      EXPECT_LT((out - x0).cwiseAbs().maxCoeff(), 1e-6) << "n=" << n;
    }
  }
}

TEST(Sampler, TimeGridIsUniformInLambda) {
  const auto sched = pipeline();
  const auto grid = time_grid(sched, 15);
  ASSERT_EQ(grid.size(), 15u);
  EXPECT_EQ(grid.front(), 100.0);
  EXPECT_EQ(grid.back(), 1.0);
  const double h = sched.lambda(grid[1]) - sched.lambda(grid[0]);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    EXPECT_LT(grid[k], grid[k - 1]);
    EXPECT_NEAR(sched.lambda(grid[k]) - sched.lambda(grid[k - 1]), h, 1e-9);
  }
  EXPECT_THROW(time_grid(sched, 0), Error);
}

TEST(SolverStep, FirstStepIsFirstOrder) {
  const auto sched = pipeline();
  const RowMatrix x = gaussian(2, kFlatDim, 5);
  const RowMatrix x0 = gaussian(2, kFlatDim, 6);
  SolverHistory h1, h2;
  const RowMatrix a = solver_step(sched, x, x0, h1, 60.0, 40.0, SolverOrder::first);
  const RowMatrix b = solver_step(sched, x, x0, h2, 60.0, 40.0, SolverOrder::second_multistep);
  EXPECT_TRUE((a.array() == b.array()).all());
  const double h = sched.lambda(40.0) - sched.lambda(60.0);
  const RowMatrix expect = (sched.noise(40.0) / sched.noise(60.0)) * x - sched.signal(40.0) * std::expm1(-h) * x0;
  EXPECT_LT((a - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SolverStep, ConstantPredictionGivesEqualOrders) {
  const auto sched = pipeline();
  const RowMatrix x = gaussian(2, kFlatDim, 7);
  const RowMatrix x0 = gaussian(2, kFlatDim, 8);
  SolverHistory h1{x0, 0.7}, h2{x0, 0.7};
  const RowMatrix a = solver_step(sched, x, x0, h1, 30.0, 20.0, SolverOrder::first);
  const RowMatrix b = solver_step(sched, x, x0, h2, 30.0, 20.0, SolverOrder::second_multistep);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SolverStep, FinalStepReturnsDataPrediction) {
  const auto sched = pipeline();
  const RowMatrix x0 = gaussian(1, kFlatDim, 9);
  SolverHistory h;
  const RowMatrix out = solver_step(sched, gaussian(1, kFlatDim, 10), x0, h, 1.0, 0.0, SolverOrder::second_multistep);
  EXPECT_TRUE((out.array() == x0.array()).all());
}

// Scalar toy with x0_hat(lambda) = a + b lambda. The exact flow satisfies
// x / sigma = e^lambda x0_hat integrated in lambda.
struct LinearToy {
  DiffusionSchedule sched = pipeline();
  double a = 0.4;
  double b = -0.3;

  double x0(double lam) const { return a + b * lam; }
  double antiderivative(double lam) const { return std::exp(lam) * (a + b * (lam - 1.0)); }

  double exact(double x_i, double t_i, double t_n) const {
    const double li = sched.lambda(t_i), ln = sched.lambda(t_n);
    return sched.noise(t_n) * (x_i / sched.noise(t_i) + antiderivative(ln) - antiderivative(li));
  }

  /// 1000 first-order substeps with x0_hat taken at each substep midpoint.
  double dense(double x_i, double t_i, double t_n) const {
    const double li = sched.lambda(t_i), ln = sched.lambda(t_n);
    double x = x_i;
    for (int k = 0; k < 1000; ++k) {
      const double l0 = li + (ln - li) * k / 1000.0, l1 = li + (ln - li) * (k + 1) / 1000.0;
      const double s0 = sched.t_of_lambda(l0), s1 = sched.t_of_lambda(l1);
      SolverHistory h;
      RowMatrix xm(1, 1), d(1, 1);
      xm(0, 0) = x;
      d(0, 0) = x0(0.5 * (l0 + l1));
      x = solver_step(sched, xm, d, h, s0, s1, SolverOrder::first)(0, 0);
    }
    return x;
  }

  /// Local error of one multistep update of size h preceded by a step of
  /// the same size.
  double second_order_error(double t_i, double h, bool dense_ref) const {
    const double li = sched.lambda(t_i);
    const double t_n = sched.t_of_lambda(li + h);
    SolverHistory hist;
    hist.x0_hat = RowMatrix::Constant(1, 1, x0(li - h));
    hist.h = h;
    RowMatrix xi(1, 1), d(1, 1);
    xi(0, 0) = 0.3;
    d(0, 0) = x0(li);
    const double got = solver_step(sched, xi, d, hist, t_i, t_n, SolverOrder::second_multistep)(0, 0);
    return std::abs(got - (dense_ref ? dense(0.3, t_i, t_n) : exact(0.3, t_i, t_n)));
  }
};

TEST(SolverStep, DenseReferenceMatchesClosedForm) {
  const LinearToy toy;
  const double t_n = toy.sched.t_of_lambda(toy.sched.lambda(40.0) + 0.5);
  EXPECT_NEAR(toy.dense(0.3, 40.0, t_n), toy.exact(0.3, 40.0, t_n), 1e-7);
}

TEST(SolverStep, MultistepLocalErrorIsThirdOrder) {
  const LinearToy toy;
  for (bool dense : {false, true}) {
    const double e1 = toy.second_order_error(40.0, 0.4, dense);
    const double e2 = toy.second_order_error(40.0, 0.2, dense);
    const double e3 = toy.second_order_error(40.0, 0.1, dense);
    EXPECT_GT(e1, 0.0);
    EXPECT_NEAR(std::log2(e1 / e2), 3.0, 0.35);
    EXPECT_NEAR(std::log2(e2 / e3), 3.0, 0.35);
  }
}

struct PlannerFixture {
  std::vector<Scenario> corpus = generate_scenarios(31, 3, ScenarioKind::mixed);
  Checkpoint ck = test::tiny_checkpoint(corpus, 5);
};

TEST(Sampler, HeadGainsMatchPerturbedSolve) {
  const auto sched = pipeline();
  const RowMatrix x_T = gaussian(2, kFlatDim, 11);
  const RowMatrix x_obs = RowMatrix::Zero(2, kStateDim);
  const RowMatrix u = gaussian(2, kFlatDim, 12);
  for (SolverOrder order : {SolverOrder::first, SolverOrder::second_multistep}) {
    SamplerConfig cfg{8, order};
    const auto grid = time_grid(sched, cfg.n_steps);
    const auto gains = head_gains(sched, grid, order, 0.2);
    ASSERT_EQ(gains.size(), grid.size());
    // eps = skip x + out (u + delta at call k), linear in the head output.
    auto solve = [&](std::size_t k, double delta) {
      std::size_t call = 0;
      auto eps = [&](const RowMatrix& x, double t) {
        const NoiseCoefficients c = noise_coefficients(sched.signal(t), sched.noise(t), 0.2);
        RowMatrix head = u;
        if (call++ == k) head.array() += delta;
        return RowMatrix(c.skip * x + c.out * head);
      };
      return integrate(sched, x_T, x_obs, eps, cfg);
    };
    const RowMatrix ref = solve(grid.size(), 0.0);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double fd = (solve(k, 1e-3)(0, kStateDim + 1) - ref(0, kStateDim + 1)) / 1e-3;
      EXPECT_NEAR(gains[k], fd, 1e-6 * std::max(1.0, std::abs(fd))) << k;
    }
  }
}

TEST(Sampler, SameSeedIsBitIdentical) {
  PlannerFixture f;
  const ScenePlanner planner(f.ck, f.corpus[0]);
  SamplerConfig cfg;
  cfg.n_steps = 4;
  const Plan a = planner.sample(1, cfg, 77);
  const Plan b = planner.sample(1, cfg, 77);
  const Plan c = sample(f.ck, f.corpus[0], 1, cfg, 77);
  EXPECT_TRUE((a.model.array() == b.model.array()).all());
  EXPECT_TRUE((a.model.array() == c.model.array()).all());
  const Plan d = planner.sample(1, cfg, 78);
  EXPECT_FALSE((a.model.array() == d.model.array()).all());
}

TEST(Sampler, HardConstraintHoldsAtEveryStep) {
  PlannerFixture f;
  const ScenePlanner planner(f.ck, f.corpus[1]);
  std::vector<RowMatrix> steps;
  SamplerConfig cfg;
  cfg.n_steps = 6;
  const Plan plan = planner.sample(0, cfg, 3, nullptr, &steps);
  ASSERT_EQ(steps.size(), 7u);
  for (const auto& x : steps)
    EXPECT_TRUE((x.leftCols(kStateDim).array() == planner.observed().array()).all());
  const Scenario& sc = f.corpus[1];
  const AgentState& ego = plan.states[0][0];
  EXPECT_EQ(ego.x, sc.ego_current().x);
  EXPECT_EQ(ego.y, sc.ego_current().y);
  EXPECT_EQ(ego.heading, sc.ego_current().heading);
  for (std::size_t p = 1; p < plan.states.size(); ++p) {
    const AgentState& obs = sc.agents[p - 1].history.back();
    EXPECT_EQ(plan.states[p][0].x, obs.x);
    EXPECT_EQ(plan.states[p][0].y, obs.y);
    EXPECT_EQ(plan.world.at(0, static_cast<int>(p), 0, 0), obs.x);
  }
}

TEST(Sampler, WorldFramePreservesRelativeDistances) {
  PlannerFixture f;
  const ScenePlanner planner(f.ck, f.corpus[2]);
  SamplerConfig cfg;
  cfg.n_steps = 3;
  const Plan plan = planner.sample(0, cfg, 5);
  ASSERT_GE(plan.states.size(), 2u);
  const RowMatrix phys = f.ck.normalizer.denormalize(plan.model);
  for (int t = 1; t <= kFutureSteps; ++t) {
    const double dx = phys(1, t * kStateDim) - phys(0, t * kStateDim);
    const double dy = phys(1, t * kStateDim + 1) - phys(0, t * kStateDim + 1);
    const auto& a = plan.states[0][static_cast<std::size_t>(t)];
    const auto& b = plan.states[1][static_cast<std::size_t>(t)];
    EXPECT_NEAR(std::hypot(dx, dy), std::hypot(b.x - a.x, b.y - a.y), 1e-6);
  }
}

TEST(Sampler, RejectsBadStrategyAndIncompatibleScene) {
  PlannerFixture f;
  const ScenePlanner planner(f.ck, f.corpus[0]);
  EXPECT_THROW(planner.sample(4, SamplerConfig{}, 1), InvalidStrategy);
  Checkpoint other = f.ck;
  other.config.history = kHistoryLen + 2;
  EXPECT_THROW(ScenePlanner(other, f.corpus[0]), IncompatibleCheckpoint);
}

TEST(Sampler, PlanJsonListsEveryPopulatedAgent) {
  PlannerFixture f;
  SamplerConfig cfg;
  cfg.n_steps = 2;
  const Plan plan = sample(f.ck, f.corpus[0], 2, cfg, 9);
  const auto j = plan_to_json(plan);
  EXPECT_EQ(j["scenario_id"], f.corpus[0].id);
  EXPECT_EQ(j["strategy"], "conservative");
  EXPECT_DOUBLE_EQ(j["dt"].get<double>(), kStepDt);
  ASSERT_EQ(j["states"].size(), plan.states.size());
  EXPECT_EQ(j["states"][0].size(), static_cast<std::size_t>(kFutureSteps + 1));
  EXPECT_EQ(j["states"][0][0].size(), 3u);
}

TEST(SamplerConfig, JsonRoundTripAndValidation) {
  SamplerConfig c{7, SolverOrder::first};
  const auto back = SamplerConfig::from_json(c.to_json());
  EXPECT_EQ(back.n_steps, 7);
  EXPECT_EQ(back.order, SolverOrder::first);
  EXPECT_THROW(SamplerConfig::from_json({{"n_steps", 0}}), Error);
  EXPECT_THROW(SamplerConfig::from_json({{"order", "third"}}), Error);
}

}  // namespace
}  // namespace mdp
