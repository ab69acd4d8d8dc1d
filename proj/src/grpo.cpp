#include "mdp/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "mdp/denoiser.hpp"
#include "mdp/errors.hpp"
#include "mdp/strategy.hpp"

namespace mdp {

namespace {

int policy_column(int idx) {
  const int step = idx / 2 + 1;
  return step * kStateDim + idx % 2;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

void GrpoConfig::validate() const {
  if (S < 2) throw Error("group size S must be at least 2");
  if (beta < 0.0) throw Error("beta must be non-negative");
  if (!(eps_std > 0.0)) throw Error("eps_std must be positive");
  if (epochs < 0 || scenes_per_epoch < 1 || scenes_per_step < 1) throw Error("invalid finetune sizes");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must lie in [0, 1)");
  check_strategy(strategy);
}

nlohmann::json GrpoConfig::to_json() const {
  return {{"S", S},
          {"beta", beta},
          {"eps_std", eps_std},
          {"epochs", epochs},
          {"lr", lr},
          {"strategy", strategy_name(strategy)},
          {"scenes_per_epoch", scenes_per_epoch},
          {"scenes_per_step", scenes_per_step},
          {"clip_norm", clip_norm},
          {"ema_decay", ema_decay},
          {"optimizer", optimizer == GrpoOptimizer::adam ? "adam" : "sgd"},
          {"momentum", momentum},
          {"natural_gradient", natural_gradient},
          {"seed", seed},
          {"sampler", sampler.to_json()}};
}

GrpoConfig GrpoConfig::from_json(const nlohmann::json& j) {
  GrpoConfig c;
  c.S = j.value("S", c.S);
  c.beta = j.value("beta", c.beta);
  c.eps_std = j.value("eps_std", c.eps_std);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  c.scenes_per_epoch = j.value("scenes_per_epoch", c.scenes_per_epoch);
  c.scenes_per_step = j.value("scenes_per_step", c.scenes_per_step);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  const std::string opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam")
    c.optimizer = GrpoOptimizer::adam;
  else if (opt == "sgd")
    c.optimizer = GrpoOptimizer::sgd;
  else
    throw Error("unknown optimizer '" + opt + "'");
  c.momentum = j.value("momentum", c.momentum);
  c.natural_gradient = j.value("natural_gradient", c.natural_gradient);
  c.seed = j.value("seed", c.seed);
  if (j.contains("sampler")) c.sampler = SamplerConfig::from_json(j.at("sampler"));
  c.validate();
  return c;
}

Eigen::VectorXd standardize(const Eigen::VectorXd& rewards, double eps_std) {
  const double n = static_cast<double>(rewards.size());
  const double mu = rewards.sum() / n;
  const double sigma = std::sqrt((rewards.array() - mu).square().sum() / n);
  return (rewards.array() - mu) / (sigma + eps_std);
}

GroupGaussian group_gaussian(const Eigen::MatrixXd& taus, double eps_std) {
  GroupGaussian g;
  const double n = static_cast<double>(taus.rows());
  g.mu = taus.colwise().sum() / n;
  g.sigma = ((taus.rowwise() - g.mu).array().square().colwise().sum() / n).sqrt().matrix();
  g.sigma = g.sigma.cwiseMax(eps_std);
  return g;
}

double group_log_prob(const Eigen::RowVectorXd& tau, const Eigen::RowVectorXd& mu, const Eigen::RowVectorXd& sigma) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const auto z = ((tau - mu).array() / sigma.array());
  return (-half_log_2pi - sigma.array().log() - 0.5 * z.square()).sum();
}

double grpo_loss(const Eigen::VectorXd& advantages, const Eigen::VectorXd& log_probs,
                 const Eigen::RowVectorXd& sigma, double beta) {
  return -advantages.dot(log_probs) + beta * sigma.array().log().mean();
}

Eigen::MatrixXd grpo_tau_gradient(const Eigen::MatrixXd& taus, const Eigen::VectorXd& advantages, double beta,
                                  double eps_std) {
  const GroupGaussian g = group_gaussian(taus, eps_std);
  const double S = static_cast<double>(taus.rows());
  const double D = static_cast<double>(taus.cols());
  const Eigen::RowVectorXd inv_var = g.sigma.array().square().inverse().matrix();
  const Eigen::MatrixXd centred = taus.rowwise() - g.mu;
  // d(-sum_i A_i logpi_i)/d mu, spread evenly over the samples forming mu.
  const Eigen::RowVectorXd d_mu = -(advantages.transpose() * centred).cwiseProduct(inv_var);
  Eigen::MatrixXd grad = (centred.array().rowwise() * inv_var.array()) * (beta / (D * S));
  grad.rowwise() += d_mu / S;
  return grad;
}

Eigen::RowVectorXd policy_coordinates(const RowMatrix& model) {
  Eigen::RowVectorXd tau(kPolicyDim);
  for (int i = 0; i < kPolicyDim; ++i) tau(i) = model(0, policy_column(i));
  return tau;
}

GroupSample sample_group(const ScenePlanner& planner, int s, int S, std::uint64_t seed, const SamplerConfig& cfg) {
  if (S < 2) throw Error("group size S must be at least 2");
  GroupSample g;
  g.taus.resize(S, kPolicyDim);
  for (int i = 0; i < S; ++i) {
    HeadTrace trace;
    g.plans.push_back(planner.sample(s, cfg, seed ^ static_cast<std::uint64_t>(i), &trace));
    g.traces.push_back(std::move(trace));
    g.taus.row(i) = policy_coordinates(g.plans.back().model);
  }
  return g;
}

void score_group(GroupSample& g, const Scenario& scene, const RewardSpec& spec, double eps_std) {
  const auto S = static_cast<Eigen::Index>(g.plans.size());
  g.rewards.resize(S);
  for (Eigen::Index i = 0; i < S; ++i)
    g.rewards(i) = reward(g.plans[static_cast<std::size_t>(i)].states.front(), scene, spec);
  g.advantages = standardize(g.rewards, eps_std);
  g.gaussian = group_gaussian(g.taus, eps_std);
  g.log_probs.resize(S);
  for (Eigen::Index i = 0; i < S; ++i)
    g.log_probs(i) = group_log_prob(g.taus.row(i), g.gaussian.mu, g.gaussian.sigma);
}

FinetuneResult finetune(const Checkpoint& ckpt, const std::vector<Scenario>& corpus, const GrpoConfig& cfg,
                        const std::function<void(const FinetuneLog&)>& on_epoch) {
  cfg.validate();
  const RewardSpec spec = RewardSpec::for_strategy(cfg.strategy);
  check_strategy(cfg.strategy, ckpt.config.heads);
  FinetuneResult res{ckpt, {}};
  if (cfg.epochs == 0) return res;
  if (corpus.empty()) throw Error("finetune corpus is empty");

  Checkpoint& ck = res.checkpoint;
  const int s = cfg.strategy;
  freeze_except_head(ck.params, s, ck.config.heads);
  const nn::ParamStore<float> snapshot = ck.params;
  const int w_idx = ck.params.find(head_weight_name(s));
  const int b_idx = ck.params.find(head_bias_name(s));
  const std::string w_name = head_weight_name(s);
  const std::string b_name = head_bias_name(s);
  auto frozen = [&](const std::string& name) { return name != w_name && name != b_name; };

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x6770));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(order.size(), static_cast<std::size_t>(cfg.scenes_per_epoch)));

  nn::Adam<float> adam;
  nn::Sgd<float> sgd(cfg.momentum);
  const long steps_per_epoch = static_cast<long>((order.size() + cfg.scenes_per_step - 1) / cfg.scenes_per_step);
  const long total_steps = steps_per_epoch * cfg.epochs;
  long step = 0;
  const int H = ck.config.hidden_dim;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    FinetuneLog log;
    log.epoch = epoch;
    double groups = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.scenes_per_step)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.scenes_per_step));
      ck.params.zero_grad();
      Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(H, kFlatDim);
      Eigen::RowVectorXd gb = Eigen::RowVectorXd::Zero(kFlatDim);
      double batch_loss = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const Scenario& scene = corpus[order[k]];
        const ScenePlanner planner(ck, scene);
        GroupSample g = sample_group(planner, s, cfg.S, mix_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) + k),
                                     cfg.sampler);
        score_group(g, scene, spec, cfg.eps_std);
        const double kl = cfg.beta * g.gaussian.sigma.array().log().mean();
        const double loss = grpo_loss(g.advantages, g.log_probs, g.gaussian.sigma, cfg.beta);
        batch_loss += loss;
        log.loss += loss;
        log.kl_term += kl;
        log.mean_reward += g.rewards.mean();
        groups += 1.0;

        Eigen::MatrixXd d_tau = grpo_tau_gradient(g.taus, g.advantages, cfg.beta, cfg.eps_std);
        if (cfg.natural_gradient) d_tau.array().rowwise() *= g.gaussian.sigma.array().square();
        for (int i = 0; i < cfg.S; ++i) {
          const HeadTrace& tr = g.traces[static_cast<std::size_t>(i)];
          Eigen::RowVectorXd d_out = Eigen::RowVectorXd::Zero(kFlatDim);
          for (int c = 0; c < kPolicyDim; ++c) d_out(policy_column(c)) = d_tau(i, c);
          for (std::size_t k = 0; k < tr.gain.size(); ++k) {
            gw += (tr.gain[k] * tr.features[k].transpose()) * d_out;
            gb += tr.gain[k] * d_out;
          }
        }
      }
      if (!std::isfinite(batch_loss))
        throw NonFiniteLoss("non-finite GRPO loss at epoch " + std::to_string(epoch));
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      ck.params.add_grad(w_idx, gw * scale);
      ck.params.add_grad(b_idx, gb * scale);
      ck.params.clip_grad_norm(cfg.clip_norm);
      const double lr = nn::cosine_lr(cfg.lr, step, total_steps);
      if (cfg.optimizer == GrpoOptimizer::adam)
        adam.step(ck.params, lr);
      else
        sgd.step(ck.params, lr);
      ck.params.ema_update(cfg.ema_decay);
      ++step;
    }
    log.loss /= groups;
    log.kl_term /= groups;
    log.mean_reward /= groups;
    log.frozen_delta_norm = ck.params.delta_norm(snapshot, frozen);
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (log.frozen_delta_norm != 0.0)
      throw FrozenViolation("frozen parameters moved during epoch " + std::to_string(epoch));
  }
  return res;
}

void write_finetune_log(const std::vector<FinetuneLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,mean_reward,loss,kl_term,frozen_delta_norm\n";
  out.precision(10);
  for (const auto& e : log)
    out << e.epoch << ',' << e.mean_reward << ',' << e.loss << ',' << e.kl_term << ',' << e.frozen_delta_norm << '\n';
}

}  // namespace mdp
