#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdp/errors.hpp"
#include "mdp/model_frame.hpp"
#include "mdp/nn/ops.hpp"
#include "mdp/nn/param_store.hpp"
#include "mdp/strategy.hpp"

namespace mdp {

struct DenoiserConfig {
  int hidden_dim = 128;
  int mixer_layers = 3;
  int attn_layers = 2;
  int dit_blocks = 2;
  int attn_heads = 4;
  int heads = kNumStrategies;  // K strategy heads
  int ff_ratio = 2;
  double data_scale = 0.2;  // assumed scale of a clean sample given its scene, normalised units
  TokenBudget budget;
  int history = kHistoryLen;

  void validate() const {
    if (hidden_dim <= 0 || attn_heads <= 0 || hidden_dim % attn_heads != 0)
      throw ShapeMismatch("hidden_dim must be a positive multiple of attn_heads");
    if (hidden_dim % 2 != 0) throw ShapeMismatch("hidden_dim must be even");
    if (heads < 2) throw ShapeMismatch("at least two strategy heads are required");
    if (mixer_layers < 0 || attn_layers < 0 || dit_blocks < 0 || ff_ratio < 1)
      throw ShapeMismatch("layer counts must be non-negative");
    if (!(data_scale > 0.0) || !std::isfinite(data_scale)) throw ShapeMismatch("data_scale must be positive");
  }

  int n_tokens() const { return budget.lanes + budget.route + budget.agents + budget.statics; }
  int route_offset() const { return budget.lanes; }
  int agent_offset() const { return budget.lanes + budget.route; }

  nlohmann::json to_json() const {
    return {{"hidden_dim", hidden_dim},
            {"mixer_layers", mixer_layers},
            {"attn_layers", attn_layers},
            {"dit_blocks", dit_blocks},
            {"attn_heads", attn_heads},
            {"heads", heads},
            {"ff_ratio", ff_ratio},
            {"data_scale", data_scale},
            {"history", history},
            {"budget",
             {{"lanes", budget.lanes}, {"route", budget.route}, {"agents", budget.agents},
              {"statics", budget.statics}}}};
  }

  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.mixer_layers = j.value("mixer_layers", c.mixer_layers);
    c.attn_layers = j.value("attn_layers", c.attn_layers);
    c.dit_blocks = j.value("dit_blocks", c.dit_blocks);
    c.attn_heads = j.value("attn_heads", c.attn_heads);
    c.heads = j.value("heads", c.heads);
    c.ff_ratio = j.value("ff_ratio", c.ff_ratio);
    c.data_scale = j.value("data_scale", c.data_scale);
    c.history = j.value("history", c.history);
    if (j.contains("budget")) {
      const auto& b = j.at("budget");
      c.budget.lanes = b.value("lanes", c.budget.lanes);
      c.budget.route = b.value("route", c.budget.route);
      c.budget.agents = b.value("agents", c.budget.agents);
      c.budget.statics = b.value("statics", c.budget.statics);
    }
    c.validate();
    return c;
  }

  friend bool operator==(const DenoiserConfig& a, const DenoiserConfig& b) {
    return a.to_json() == b.to_json();
  }
};

/// Encoder inputs converted to the working precision.
template <class Real>
struct SceneTokens {
  nn::Mat<Real> lanes, route, agents, statics;
  nn::Mask lane_valid, route_valid, agent_valid, static_valid;
  int history = kHistoryLen;
};

template <class Real>
SceneTokens<Real> scene_tokens(const ModelInput& in) {
  SceneTokens<Real> s;
  s.lanes = in.lanes.cast<Real>();
  s.route = in.route.cast<Real>();
  s.agents = in.agents.cast<Real>();
  s.statics = in.statics.cast<Real>();
  s.lane_valid = in.lane_valid;
  s.route_valid = in.route_valid;
  s.agent_valid = in.agent_valid;
  s.static_valid = in.static_valid;
  s.history = in.history;
  return s;
}

// Parameter naming for the strategy-dependent tensors. While the heads are
// shared a single "shared" block serves every strategy.
inline std::string head_weight_name(int s) { return "head." + std::to_string(s) + ".weight"; }
inline std::string head_bias_name(int s) { return "head." + std::to_string(s) + ".bias"; }
inline std::string strategy_embed_name(int s) { return "strategy_embed." + std::to_string(s); }
inline constexpr const char* kSharedHeadWeight = "head.shared.weight";
inline constexpr const char* kSharedHeadBias = "head.shared.bias";
inline constexpr const char* kSharedStrategyEmbed = "strategy_embed.shared";

template <class Real>
bool heads_shared(const nn::ParamStore<Real>& ps) {
  return ps.find(kSharedHeadWeight) >= 0;
}

/// Splits the shared head and strategy embedding into K independent copies.
template <class Real>
void materialize_heads(nn::ParamStore<Real>& ps, int heads) {
  if (!heads_shared(ps)) return;
  std::vector<std::string> w, b, e;
  for (int k = 0; k < heads; ++k) {
    w.push_back(head_weight_name(k));
    b.push_back(head_bias_name(k));
    e.push_back(strategy_embed_name(k));
  }
  ps.split(kSharedHeadWeight, w);
  ps.split(kSharedHeadBias, b);
  ps.split(kSharedStrategyEmbed, e);
}

/// Leaves only head s's output layer trainable; returns the trainable scalar
/// count.
template <class Real>
std::size_t freeze_except_head(nn::ParamStore<Real>& ps, int s, int heads) {
  check_strategy(s, heads);
  materialize_heads(ps, heads);
  ps.set_all_trainable(false);
  ps[ps.find(head_weight_name(s))].trainable = true;
  ps[ps.find(head_bias_name(s))].trainable = true;
  return ps.trainable_count();
}

template <class Real>
void init_denoiser_params(nn::ParamStore<Real>& ps, const DenoiserConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int H = cfg.hidden_dim;
  const int F = cfg.ff_ratio;
  auto weight = [&](const std::string& name, int in, int out) {
    nn::init_truncated_normal(ps[ps.add(name, in, out)], 0.02, rng);
  };
  auto zeros = [&](const std::string& name, int rows, int cols) { ps.add(name, rows, cols); };
  auto linear = [&](const std::string& name, int in, int out) {
    weight(name + ".weight", in, out);
    zeros(name + ".bias", 1, out);
  };
  auto mlp = [&](const std::string& name, int in, int hidden) {
    linear(name + ".fc1", in, hidden);
    linear(name + ".fc2", hidden, in);
  };
  auto attention = [&](const std::string& name) {
    for (const char* p : {".q", ".k", ".v", ".o"}) linear(name + p, H, H);
  };

  struct Element {
    const char* name;
    int points;
    int features;
  };
  const Element elements[] = {{"lanes", kPolylinePoints, kPolylineFeatures},
                              {"route", kPolylinePoints, kPolylineFeatures},
                              {"agents", cfg.history, kAgentFeatures},
                              {"statics", 1, kStaticFeatures}};
  for (const auto& e : elements) {
    const std::string base = std::string("enc.") + e.name;
    linear(base + ".in", e.features, H);
    for (int l = 0; l < cfg.mixer_layers; ++l) {
      const std::string m = base + ".mix" + std::to_string(l);
      if (e.points > 1) mlp(m + ".token", e.points, e.points * F);
      mlp(m + ".channel", H, H * F);
    }
    weight(base + ".type", 1, H);
  }
  weight("enc.agent_slot", 2, H);
  for (int l = 0; l < cfg.attn_layers; ++l) {
    const std::string b = "enc.attn" + std::to_string(l);
    attention(b + ".self");
    mlp(b + ".mlp", H, H * F);
  }

  linear("dec.in", kFlatDim, H);
  weight("dec.slot", 2, H);
  mlp("dec.time", H, H);
  for (int b = 0; b < cfg.dit_blocks; ++b) {
    const std::string p = "dec.block" + std::to_string(b);
    zeros(p + ".ada.weight", H, 9 * H);
    zeros(p + ".ada.bias", 1, 9 * H);
    attention(p + ".self");
    attention(p + ".cross");
    mlp(p + ".mlp", H, H * F);
  }
  zeros("dec.final.ada.weight", H, 2 * H);
  zeros("dec.final.ada.bias", 1, 2 * H);
  weight(kSharedStrategyEmbed, 1, H);
  weight(kSharedHeadWeight, H, kFlatDim);
  zeros(kSharedHeadBias, 1, kFlatDim);
  ps.reset_ema();
}

struct NoiseCoefficients {
  double skip = 0.0;  // d eps_hat / d x_t through the skip path
  double out = 0.0;   // d eps_hat / d head output
  double x0 = 0.0;    // d x0_hat / d head output
};

inline NoiseCoefficients noise_coefficients(double signal, double noise, double data_scale) {
  const double q = std::sqrt(noise * noise + data_scale * data_scale * signal * signal);
  return {noise / (q * q), -data_scale * signal / q, noise * data_scale / q};
}

/// The noise-prediction network: per-element MLP-Mixer encoder, transformer
/// refinement over scene tokens, and an adaLN diffusion transformer decoder
/// over agent slots with one output head per strategy.
template <class Real>
class Denoiser {
 public:
  using Tape = nn::Tape<Real>;
  using Store = nn::ParamStore<Real>;
  using M = nn::Mat<Real>;
  using Var = nn::Var;

  struct Encoded {
    Var z;  // [n_tokens, H]; masked tokens are zero rows
    nn::Mask token_valid;
    nn::Mask agent_valid;
    Var route_ctx;  // [1, H]
  };

  Denoiser(const DenoiserConfig& cfg, const Store& ps) : cfg_(cfg), ps_(ps) { cfg_.validate(); }

  const DenoiserConfig& config() const { return cfg_; }

  Encoded encode(Tape& t, const SceneTokens<Real>& in) const {
    const auto& b = cfg_.budget;
    check_rows(in.lanes, b.lanes * kPolylinePoints, kPolylineFeatures, "lane tokens");
    check_rows(in.route, b.route * kPolylinePoints, kPolylineFeatures, "route tokens");
    check_rows(in.agents, b.agents * cfg_.history, kAgentFeatures, "agent tokens");
    check_rows(in.statics, b.statics, kStaticFeatures, "static tokens");
    if (in.lane_valid.size() != static_cast<std::size_t>(b.lanes) ||
        in.route_valid.size() != static_cast<std::size_t>(b.route) ||
        in.agent_valid.size() != static_cast<std::size_t>(b.agents) ||
        in.static_valid.size() != static_cast<std::size_t>(b.statics))
      throw ShapeMismatch("token mask sizes do not match the token budget");

    Var lanes = element(t, t.constant(in.lanes), "lanes", b.lanes, kPolylinePoints, in.lane_valid);
    Var route = element(t, t.constant(in.route), "route", b.route, kPolylinePoints, in.route_valid);
    Var agents = element(t, t.constant(in.agents), "agents", b.agents, cfg_.history, in.agent_valid);
    agents = add(t, agents, matmul(t, t.constant(slot_selector(b.agents)), p(t, "enc.agent_slot")));
    agents = mask_rows(t, agents, in.agent_valid);
    Var statics = element(t, t.constant(in.statics), "statics", b.statics, 1, in.static_valid);

    Encoded e;
    for (const auto* m : {&in.lane_valid, &in.route_valid, &in.agent_valid, &in.static_valid})
      e.token_valid.insert(e.token_valid.end(), m->begin(), m->end());
    e.agent_valid = in.agent_valid;

    Var x = nn::concat_rows(t, std::vector<Var>{lanes, route, agents, statics});
    for (int l = 0; l < cfg_.attn_layers; ++l) {
      const std::string pre = "enc.attn" + std::to_string(l);
      Var y = layer_norm(t, x);
      x = add(t, x, attention(t, y, y, e.token_valid, pre + ".self"));
      x = add(t, x, mlp(t, layer_norm(t, x), pre + ".mlp"));
    }
    e.z = mask_rows(t, layer_norm(t, x), e.token_valid);
    e.route_ctx = nn::masked_mean_rows(t, nn::slice_rows(t, e.z, cfg_.route_offset(), b.route), in.route_valid);
    return e;
  }

  /// Decoder features ahead of the output head. `x_t` is [P, kFlatDim] in
  /// normalised model space and `t_frac` = t / T_diff.
  Var features(Tape& t, const Encoded& e, Var x_t, Real t_frac, int s) const {
    check_strategy(s, cfg_.heads);
    const int P = cfg_.budget.agents;
    if (t.rows(x_t) != P || t.cols(x_t) != kFlatDim) throw ShapeMismatch("x_t must be [P, d]");
    const int H = cfg_.hidden_dim;

    Var h = linear(t, x_t, "dec.in");
    h = add(t, h, nn::slice_rows(t, e.z, cfg_.agent_offset(), P));
    h = add(t, h, matmul(t, t.constant(slot_selector(P)), p(t, "dec.slot")));

    Var c = linear(t, nn::silu(t, linear(t, t.constant(time_embedding(t_frac)), "dec.time.fc1")), "dec.time.fc2");
    c = add(t, c, p(t, heads_shared(ps_) ? std::string(kSharedStrategyEmbed) : strategy_embed_name(s)));
    c = add(t, c, e.route_ctx);
    Var sc = nn::silu(t, c);

    for (int b = 0; b < cfg_.dit_blocks; ++b) {
      const std::string pre = "dec.block" + std::to_string(b);
      Var mod = linear(t, sc, pre + ".ada");
      auto chunk = [&](int k) { return nn::slice_cols(t, mod, k * H, H); };
      Var y = modulate(t, layer_norm(t, h), chunk(0), chunk(1));
      y = attention(t, y, y, e.agent_valid, pre + ".self");
      h = add(t, h, nn::mul_row(t, y, chunk(2)));
      y = modulate(t, layer_norm(t, h), chunk(3), chunk(4));
      y = attention(t, y, e.z, e.token_valid, pre + ".cross");
      h = add(t, h, nn::mul_row(t, y, chunk(5)));
      y = modulate(t, layer_norm(t, h), chunk(6), chunk(7));
      y = mlp(t, y, pre + ".mlp");
      h = add(t, h, nn::mul_row(t, y, chunk(8)));
    }
    Var mod = linear(t, sc, "dec.final.ada");
    return modulate(t, layer_norm(t, h), nn::slice_cols(t, mod, 0, H), nn::slice_cols(t, mod, H, H));
  }

  /// Strategy head s: features [P, H] -> [P, kFlatDim].
  Var head(Tape& t, Var feats, int s) const {
    check_strategy(s, cfg_.heads);
    const bool shared = heads_shared(ps_);
    Var w = p(t, shared ? std::string(kSharedHeadWeight) : head_weight_name(s));
    Var bias = p(t, shared ? std::string(kSharedHeadBias) : head_bias_name(s));
    return nn::add_row(t, nn::matmul(t, feats, w), bias);
  }

  /// eps_hat = (noise / q^2) x_t - (d signal / q) head(features)
  /// with q^2 = noise^2 + d^2 signal^2, d = data_scale, where signal and noise are
  /// the schedule coefficients at t. The head then carries a clean-sample
  /// estimate of roughly unit scale at every noise level.
  Var noise_from_head(Tape& t, Var x_t, Var head_out, Real signal, Real noise) const {
    const NoiseCoefficients c = noise_coefficients(signal, noise, cfg_.data_scale);
    return add(t, nn::scale(t, x_t, static_cast<Real>(c.skip)), nn::scale(t, head_out, static_cast<Real>(c.out)));
  }

  Var predict_noise(Tape& t, const Encoded& e, Var x_t, Real t_frac, int s, Real signal, Real noise) const {
    return noise_from_head(t, x_t, head(t, features(t, e, x_t, t_frac, s), s), signal, noise);
  }

  /// Sinusoidal embedding of t / T_diff, [1, H].
  M time_embedding(Real t_frac) const {
    const int half = cfg_.hidden_dim / 2;
    M out(1, cfg_.hidden_dim);
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = 1000.0 * static_cast<double>(t_frac) * freq;
      out(0, i) = static_cast<Real>(std::sin(arg));
      out(0, half + i) = static_cast<Real>(std::cos(arg));
    }
    return out;
  }

 private:
  static void check_rows(const M& m, int rows, int cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols)
      throw ShapeMismatch(std::string(what) + " have shape [" + std::to_string(m.rows()) + ", " +
                          std::to_string(m.cols()) + "], expected [" + std::to_string(rows) + ", " +
                          std::to_string(cols) + "]");
  }

  /// One-hot rows picking embedding 0 for slot 0 (ego) and 1 otherwise.
  static M slot_selector(int slots) {
    M sel = M::Zero(slots, 2);
    sel(0, 0) = Real(1);
    for (int i = 1; i < slots; ++i) sel(i, 1) = Real(1);
    return sel;
  }

  Var p(Tape& t, const std::string& name) const {
    const int i = ps_.find(name);
    if (i < 0) throw IncompatibleCheckpoint("missing parameter " + name);
    return ps_.leaf(t, i);
  }

  Var layer_norm(Tape& t, Var x) const { return nn::layer_norm(t, x); }
  Var add(Tape& t, Var a, Var b) const { return nn::add(t, a, b); }
  Var matmul(Tape& t, Var a, Var b) const { return nn::matmul(t, a, b); }
  Var mask_rows(Tape& t, Var a, const nn::Mask& m) const { return nn::mask_rows(t, a, m); }

  Var linear(Tape& t, Var x, const std::string& name) const {
    return nn::add_row(t, nn::matmul(t, x, p(t, name + ".weight")), p(t, name + ".bias"));
  }

  Var mlp(Tape& t, Var x, const std::string& name) const {
    return linear(t, nn::gelu(t, linear(t, x, name + ".fc1")), name + ".fc2");
  }

  Var modulate(Tape& t, Var x, Var shift, Var scale) const {
    return nn::add_row(t, nn::mul_row(t, x, nn::add_const(t, scale, Real(1))), shift);
  }

  Var attention(Tape& t, Var q_src, Var kv_src, const nn::Mask& key_mask, const std::string& name) const {
    const int H = cfg_.hidden_dim;
    const int nh = cfg_.attn_heads;
    const int dh = H / nh;
    Var q = linear(t, q_src, name + ".q");
    Var k = linear(t, kv_src, name + ".k");
    Var v = linear(t, kv_src, name + ".v");
    const Real inv = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(dh)));
    std::vector<Var> heads;
    for (int hh = 0; hh < nh; ++hh) {
      Var qh = nn::slice_cols(t, q, hh * dh, dh);
      Var kh = nn::slice_cols(t, k, hh * dh, dh);
      Var vh = nn::slice_cols(t, v, hh * dh, dh);
      Var w = nn::softmax_masked(t, nn::scale(t, nn::matmul_nt(t, qh, kh), inv), key_mask);
      heads.push_back(nn::matmul(t, w, vh));
    }
    Var o = nh == 1 ? heads.front() : nn::concat_cols(t, heads);
    return linear(t, o, name + ".o");
  }

  /// Mixer stack over one element class, mean-pooled to one token per element.
  Var element(Tape& t, Var tokens, const char* cls, int n, int points, const nn::Mask& valid) const {
    const std::string base = std::string("enc.") + cls;
    Var x = linear(t, tokens, base + ".in");
    for (int l = 0; l < cfg_.mixer_layers; ++l) {
      const std::string m = base + ".mix" + std::to_string(l);
      if (points > 1) {
        Var y = nn::block_transpose(t, layer_norm(t, x), n);
        y = mlp(t, y, m + ".token");
        x = add(t, x, nn::block_transpose(t, y, n));
      }
      x = add(t, x, mlp(t, layer_norm(t, x), m + ".channel"));
    }
    Var pooled = points > 1 ? nn::segment_mean_rows(t, layer_norm(t, x), n) : layer_norm(t, x);
    pooled = nn::add_row(t, pooled, p(t, base + ".type"));
    return mask_rows(t, pooled, valid);
  }

  DenoiserConfig cfg_;
  const Store& ps_;
};

}  // namespace mdp
