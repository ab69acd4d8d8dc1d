#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mdp/denoiser.hpp"
#include "mdp/grpo.hpp"
#include "mdp/scenario_gen.hpp"
#include "test_util.hpp"

namespace mdp {
namespace {

using test::tiny_config;
using Mf = nn::Mat<float>;

Scenario lead_scene(std::uint64_t seed = 3) {
  return generate_scenarios(seed, 1, ScenarioKind::lead_vehicle).front();
}

RowMatrix noise_matrix(int rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix m(rows, kFlatDim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

struct Outputs {
  Mf z;
  Mf eps;
};

Outputs run(const DenoiserConfig& cfg, const nn::ParamStore<float>& ps, const SceneTokens<float>& tok,
            const RowMatrix& x_t, int s, double t_frac = 0.4) {
  const Denoiser<float> net(cfg, ps);
  nn::Tape<float> tape(false);
  const auto enc = net.encode(tape, tok);
  const auto e = net.predict_noise(tape, enc, tape.constant(x_t.cast<float>()), static_cast<float>(t_frac), s, 0.6f,
                                   0.8f);
  return {tape.value(enc.z), tape.value(e)};
}

nn::ParamStore<float> random_store(const DenoiserConfig& cfg, std::uint64_t seed) {
  nn::ParamStore<float> ps;
  init_denoiser_params(ps, cfg, seed);
  // Lift the zero-initialised modulation so every path is live.
  std::mt19937_64 rng(seed + 7);
  std::normal_distribution<float> n(0.0f, 0.2f);
  for (auto& t : ps)
    for (float& v : t.value) v += n(rng);
  return ps;
}

TEST(Denoiser, MaskedAgentSlotContentIsIgnored) {
  const auto cfg = tiny_config();
  const auto ps = random_store(cfg, 11);
  const ModelInput in = to_model_frame(lead_scene(), cfg.budget);
  ASSERT_FALSE(in.agent_valid.back());
  auto a = scene_tokens<float>(in);
  auto b = a;
  const int last = cfg.budget.agents - 1;
  b.agents.middleRows(last * in.history, in.history).setConstant(42.0f);
  const RowMatrix x = noise_matrix(cfg.budget.agents, 1);
  const auto oa = run(cfg, ps, a, x, 0);
  const auto ob = run(cfg, ps, b, x, 0);
  EXPECT_TRUE((oa.z.array() == ob.z.array()).all());
  for (int r = 0; r < last; ++r) EXPECT_TRUE((oa.eps.row(r).array() == ob.eps.row(r).array()).all());
}

TEST(Denoiser, ItemsAreIndependentOfOtherItemsOnTheTape) {
  const auto cfg = tiny_config();
  const auto ps = random_store(cfg, 12);
  const auto tok = scene_tokens<float>(to_model_frame(lead_scene(), cfg.budget));
  const auto other = scene_tokens<float>(to_model_frame(lead_scene(9), cfg.budget));
  const RowMatrix x = noise_matrix(cfg.budget.agents, 2);
  const auto single = run(cfg, ps, tok, x, 0);

  const Denoiser<float> net(cfg, ps);
  nn::Tape<float> tape(false);
  std::vector<nn::Var> outs;
  for (int k = 0; k < 4; ++k) {
    const auto enc = net.encode(tape, k % 2 == 0 ? tok : other);
    outs.push_back(net.predict_noise(tape, enc, tape.constant(x.cast<float>()), 0.4f, 0, 0.6f, 0.8f));
  }
  for (int k = 0; k < 4; k += 2)
    EXPECT_LT((tape.value(outs[static_cast<std::size_t>(k)]) - single.eps).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Denoiser, FixedSeedIsBitReproducible) {
  const auto cfg = tiny_config();
  const auto tok = scene_tokens<float>(to_model_frame(lead_scene(), cfg.budget));
  const RowMatrix x = noise_matrix(cfg.budget.agents, 3);
  const auto a = run(cfg, random_store(cfg, 13), tok, x, 1);
  const auto b = run(cfg, random_store(cfg, 13), tok, x, 1);
  EXPECT_TRUE((a.z.array() == b.z.array()).all());
  EXPECT_TRUE((a.eps.array() == b.eps.array()).all());
}

TEST(Denoiser, SharedHeadsGiveIdenticalOutputs) {
  const auto cfg = tiny_config();
  const auto ps = random_store(cfg, 14);
  ASSERT_TRUE(heads_shared(ps));
  const auto tok = scene_tokens<float>(to_model_frame(lead_scene(), cfg.budget));
  const RowMatrix x = noise_matrix(cfg.budget.agents, 4);
  const auto a = run(cfg, ps, tok, x, 1);
  const auto b = run(cfg, ps, tok, x, 2);
  EXPECT_TRUE((a.eps.array() == b.eps.array()).all());
}

TEST(Denoiser, OutputShapeMatchesInputAndStrategyIsChecked) {
  const auto cfg = tiny_config();
  const auto ps = random_store(cfg, 15);
  const auto tok = scene_tokens<float>(to_model_frame(lead_scene(), cfg.budget));
  const RowMatrix x = noise_matrix(cfg.budget.agents, 5);
  const auto o = run(cfg, ps, tok, x, 3);
  EXPECT_EQ(o.eps.rows(), x.rows());
  EXPECT_EQ(o.eps.cols(), x.cols());
  EXPECT_THROW(run(cfg, ps, tok, x, 4), InvalidStrategy);
  EXPECT_THROW(run(cfg, ps, tok, x, -1), InvalidStrategy);
}

TEST(Denoiser, WrongTokenShapeThrows) {
  const auto cfg = tiny_config();
  const auto ps = random_store(cfg, 16);
  auto tok = scene_tokens<float>(to_model_frame(lead_scene(), cfg.budget));
  tok.lanes.conservativeResize(tok.lanes.rows() - 1, Eigen::NoChange);
  const Denoiser<float> net(cfg, ps);
  nn::Tape<float> tape(false);
  EXPECT_THROW(net.encode(tape, tok), ShapeMismatch);
}

TEST(Denoiser, ConfigRejectsIndivisibleHeadsAndSingleStrategy) {
  auto cfg = tiny_config();
  cfg.attn_heads = 3;
  EXPECT_THROW(cfg.validate(), ShapeMismatch);
  cfg = tiny_config();
  cfg.heads = 1;
  EXPECT_THROW(cfg.validate(), ShapeMismatch);
}

TEST(Denoiser, NeighbourSlotPermutationPermutesOutputs) {
  const auto cfg = tiny_config();
  const auto ps = random_store(cfg, 17);
  ModelInput in;
  for (const auto& sc : generate_scenarios(5, 20, ScenarioKind::mixed)) {
    in = to_model_frame(sc, cfg.budget);
    if (in.agent_valid[1] && in.agent_valid[2]) break;
  }
  ASSERT_TRUE(in.agent_valid[1] && in.agent_valid[2]);
  auto a = scene_tokens<float>(in);
  const int h = in.history;
  RowMatrix x = noise_matrix(cfg.budget.agents, 6);
  auto b = a;
  RowMatrix xb = x;
  // Swap neighbour slots 1 and 2.
  b.agents.middleRows(1 * h, h) = a.agents.middleRows(2 * h, h);
  b.agents.middleRows(2 * h, h) = a.agents.middleRows(1 * h, h);
  xb.row(1) = x.row(2);
  xb.row(2) = x.row(1);
  const auto oa = run(cfg, ps, a, x, 0);
  const auto ob = run(cfg, ps, b, xb, 0);
  EXPECT_LT((oa.eps.row(0) - ob.eps.row(0)).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_LT((oa.eps.row(1) - ob.eps.row(2)).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_LT((oa.eps.row(2) - ob.eps.row(1)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Denoiser, FreezeLeavesOnlyTheHeadOutputLayerTrainable) {
  const auto cfg = tiny_config();
  auto ps = random_store(cfg, 18);
  const std::size_t n = freeze_except_head(ps, 1, cfg.heads);
  EXPECT_EQ(n, static_cast<std::size_t>(cfg.hidden_dim * kFlatDim + kFlatDim));
  EXPECT_FALSE(heads_shared(ps));
  for (const auto& t : ps)
    EXPECT_EQ(t.trainable, t.name == head_weight_name(1) || t.name == head_bias_name(1)) << t.name;

  freeze_except_head(ps, 3, cfg.heads);
  EXPECT_FALSE(ps[ps.find(head_weight_name(1))].trainable);
  EXPECT_FALSE(ps[ps.find(head_bias_name(1))].trainable);
  EXPECT_TRUE(ps[ps.find(head_weight_name(3))].trainable);
  EXPECT_TRUE(ps[ps.find(head_bias_name(3))].trainable);
}

TEST(Denoiser, UpdateStepMovesOnlyTheUnfrozenHead) {
  const auto cfg = tiny_config();
  auto ps = random_store(cfg, 19);
  freeze_except_head(ps, 1, cfg.heads);
  const auto before = ps;
  for (auto& t : ps) std::fill(t.grad.begin(), t.grad.end(), 0.5f);
  nn::Adam<float> opt;
  opt.step(ps, 1e-2);
  ps.ema_update(0.9);
  const double frozen = ps.delta_norm(before, [](const std::string& name) {
    return name != head_weight_name(1) && name != head_bias_name(1);
  });
  EXPECT_EQ(frozen, 0.0);
  EXPECT_GT(ps.delta_norm(before, [](const std::string&) { return true; }), 0.0);
}

TEST(Denoiser, FinetuningOneHeadLeavesOtherHeadsBitIdentical) {
  const auto corpus = generate_scenarios(21, 2, ScenarioKind::lead_vehicle);
  const Checkpoint ck = test::tiny_checkpoint(corpus, 20);
  GrpoConfig g;
  g.strategy = 2;
  g.S = 2;
  g.epochs = 1;
  g.scenes_per_epoch = 2;
  g.scenes_per_step = 2;
  g.lr = 1e-2;
  g.sampler.n_steps = 2;
  const auto res = finetune(ck, corpus, g);

  auto before = ck.params;
  materialize_heads(before, ck.config.heads);
  const auto tok = scene_tokens<float>(to_model_frame(corpus[0], ck.config.budget));
  const RowMatrix x = noise_matrix(ck.config.budget.agents, 7);
  for (int s : {0, 1, 3}) {
    const auto a = run(ck.config, before, tok, x, s);
    const auto b = run(ck.config, res.checkpoint.params, tok, x, s);
    EXPECT_TRUE((a.eps.array() == b.eps.array()).all()) << "strategy " << s;
  }
  const auto a2 = run(ck.config, before, tok, x, 2);
  const auto b2 = run(ck.config, res.checkpoint.params, tok, x, 2);
  EXPECT_FALSE((a2.eps.array() == b2.eps.array()).all());
}

nn::ParamStore<double> ema_store(double live, double ema) {
  nn::ParamStore<double> ps;
  ps.add("w", 2, 3);
  for (double& v : ps[0].value) v = live;
  for (double& v : ps[0].ema) v = ema;
  return ps;
}

TEST(Ema, DecayNearOneLeavesEmaUnchanged) {
  auto ps = ema_store(5.0, 1.0);
  ps.ema_update(1.0 - 1e-15);
  for (double v : ps[0].ema) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Ema, DecayZeroCopiesLive) {
  auto ps = ema_store(5.0, 1.0);
  ps.ema_update(0.0);
  for (double v : ps[0].ema) EXPECT_EQ(v, 5.0);
}

TEST(Ema, ConstantLiveDecaysGeometrically) {
  auto ps = ema_store(1.0, 0.0);
  double prev = 1.0;
  for (int k = 1; k <= 1000; ++k) {
    ps.ema_update(0.999);
    const double gap = std::abs(ps[0].ema[0] - ps[0].value[0]);
    ASSERT_LT(gap, prev);
    prev = gap;
  }
  EXPECT_NEAR(prev, std::pow(0.999, 1000), 1e-12);
}

TEST(Ema, FrozenTensorsAreSkipped) {
  auto ps = ema_store(5.0, 1.0);
  ps[0].trainable = false;
  ps.ema_update(0.5);
  for (double v : ps[0].ema) EXPECT_EQ(v, 1.0);
}

}  // namespace
}  // namespace mdp
