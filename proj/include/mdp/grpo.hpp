#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "mdp/behavior.hpp"
#include "mdp/checkpoint.hpp"
#include "mdp/sampler.hpp"
#include "mdp/scene.hpp"

namespace mdp {

enum class GrpoOptimizer { adam, sgd };

struct GrpoConfig {
  int S = 16;             // group size
  double beta = 0.01;     // weight of the log-sigma term
  double eps_std = 1e-8;  // stabiliser of the standardisation and sigma clamp
  int epochs = 30;
  double lr = 1e-4;
  int strategy = 1;
  int scenes_per_epoch = 32;
  int scenes_per_step = 4;
  double clip_norm = 1.0;
  double ema_decay = 0.99;
  GrpoOptimizer optimizer = GrpoOptimizer::adam;
  double momentum = 0.9;  // sgd only
  bool natural_gradient = false;  // scale tau gradients by the group variance
  std::uint64_t seed = 0;
  SamplerConfig sampler;

  void validate() const;
  nlohmann::json to_json() const;
  static GrpoConfig from_json(const nlohmann::json& j);
};

/// A_i = (r_i - mean) / (std + eps_std) with population statistics.
Eigen::VectorXd standardize(const Eigen::VectorXd& rewards, double eps_std);

/// Element-wise group mean and population standard deviation (clamped to
/// eps_std) of the rows of `taus` [S, D].
struct GroupGaussian {
  Eigen::RowVectorXd mu;
  Eigen::RowVectorXd sigma;
};
GroupGaussian group_gaussian(const Eigen::MatrixXd& taus, double eps_std);

/// Diagonal Gaussian log-density of `tau` summed over coordinates.
double group_log_prob(const Eigen::RowVectorXd& tau, const Eigen::RowVectorXd& mu, const Eigen::RowVectorXd& sigma);

/// -sum_i A_i logpi_i + beta * mean(log sigma).
double grpo_loss(const Eigen::VectorXd& advantages, const Eigen::VectorXd& log_probs,
                 const Eigen::RowVectorXd& sigma, double beta);

/// Gradient of grpo_loss with respect to every sample's tau [S, D]. The
/// samples enter the log-density through the group mean; sigma is treated as
/// a constant there and differentiated only inside the log-sigma term.
Eigen::MatrixXd grpo_tau_gradient(const Eigen::MatrixXd& taus, const Eigen::VectorXd& advantages, double beta,
                                  double eps_std);

/// Coordinates scored by the group Gaussian: ego x and y at steps 1..T in
/// normalised model space, [1, 2T].
Eigen::RowVectorXd policy_coordinates(const RowMatrix& model);
inline constexpr int kPolicyDim = 2 * kFutureSteps;

struct GroupSample {
  std::vector<Plan> plans;
  std::vector<HeadTrace> traces;
  Eigen::MatrixXd taus;  // [S, kPolicyDim]
  Eigen::VectorXd rewards;
  Eigen::VectorXd advantages;
  GroupGaussian gaussian;
  Eigen::VectorXd log_probs;
};

/// S samples of head s; sample i uses seed (seed xor i).
GroupSample sample_group(const ScenePlanner& planner, int s, int S, std::uint64_t seed, const SamplerConfig& cfg);

/// Fills rewards, advantages, the group Gaussian and log-probabilities.
void score_group(GroupSample& g, const Scenario& scene, const RewardSpec& spec, double eps_std);

struct FinetuneLog {
  int epoch = 0;
  double mean_reward = 0.0;
  double loss = 0.0;
  double kl_term = 0.0;
  double frozen_delta_norm = 0.0;
};

struct FinetuneResult {
  Checkpoint checkpoint;
  std::vector<FinetuneLog> log;
};

/// Group-relative policy optimisation of head `cfg.strategy`'s output layer.
/// Throws InvalidStrategy for the base head, NonFiniteLoss, FrozenViolation.
FinetuneResult finetune(const Checkpoint& ckpt, const std::vector<Scenario>& corpus, const GrpoConfig& cfg,
                        const std::function<void(const FinetuneLog&)>& on_epoch = {});

void write_finetune_log(const std::vector<FinetuneLog>& log, const std::filesystem::path& path);

}  // namespace mdp
