#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdp/checkpoint.hpp"
#include "mdp/denoiser.hpp"
#include "mdp/model_frame.hpp"
#include "mdp/schedule.hpp"
#include "mdp/scene.hpp"
#include "mdp/trajectory.hpp"

namespace mdp {

/// Mean squared error over the noised columns (every step but 0).
struct LossParts {
  double total = 0.0;
  double ego = 0.0;
  double neighbor = 0.0;
};

/// Ego = slot 0; neighbour loss averages populated neighbour slots only and
/// is 0 when none are populated.
LossParts combine_losses(const RowMatrix& eps_hat, const RowMatrix& eps, const std::vector<std::uint8_t>& agent_valid,
                         double alpha_ego);

/// Per-element weights such that sum(w .* (eps_hat - eps)^2) equals the total
/// loss of combine_losses.
RowMatrix loss_weights(const std::vector<std::uint8_t>& agent_valid, double alpha_ego, int rows);

/// One training example in normalised model space.
struct TrainingItem {
  SceneTokens<float> tokens;
  RowMatrix target;  // [P, kFlatDim], normalised
  std::vector<std::uint8_t> agent_valid;
};

std::vector<ModelInput> encode_corpus(const std::vector<Scenario>& corpus, const TokenBudget& budget);
Normalizer fit_normalizer(const std::vector<ModelInput>& inputs);
TrainingItem make_training_item(const ModelInput& in, const Normalizer& norm);

struct TrainConfig;
/// Copy of `tokens` with the past ego history rows perturbed; the current row is untouched.
SceneTokens<float> jitter_ego_history(const SceneTokens<float>& tokens, const TrainConfig& cfg, std::mt19937_64& rng);

struct TrainConfig {
  double alpha_ego = 5.0;
  double lr = 3e-4;
  int batch_size = 16;
  int epochs = 50;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  double ema_decay = 0.999;
  int draws_per_scene = 4;  // noise draws sharing one encoder pass
  // Gaussian jitter on past ego history states (speed in m/s, position along
  // heading in m), redrawn every time a scene is visited.
  double history_speed_noise = 0.0;
  double history_pos_noise = 0.0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Sampled (t, eps) pair per item.
struct NoiseDraw {
  double t = 0.0;
  RowMatrix eps;
};

/// Loss of a noise predictor over `items`, averaged across items.
using NoisePredictor = std::function<RowMatrix(std::size_t item, const RowMatrix& x_t, double t)>;
LossParts score_loss(const DiffusionSchedule& sched, const std::vector<TrainingItem>& items,
                     const std::vector<NoiseDraw>& draws, const NoisePredictor& predict, double alpha_ego);

/// Loss of the denoiser in `ckpt` under strategy s.
LossParts score_loss(const Checkpoint& ckpt, const std::vector<TrainingItem>& items,
                     const std::vector<NoiseDraw>& draws, int s, double alpha_ego);

struct EpochLog {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_ego = 0.0;
  double loss_neighbor = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

/// Score-matching pre-training with all heads shared. Throws NonFiniteLoss.
TrainResult train_base(const std::vector<Scenario>& corpus, const TrainConfig& cfg,
                       const DenoiserConfig& model_cfg, const ScheduleParams& sched_params,
                       const std::function<void(const EpochLog&)>& on_epoch = {});

void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace mdp
