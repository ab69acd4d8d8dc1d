#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "mdp/scene.hpp"

namespace mdp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Batched multi-agent future states, shape [B, P, T+1, d_s] with channels
/// (x, y, cos h, sin h). Agent 0 is the ego. Storage is contiguous so the
/// flat [B, P, d] view with d = d_s * (T+1) aliases the same memory.
class TrajectoryTensor {
 public:
  TrajectoryTensor() = default;
  TrajectoryTensor(int batch, int agents, int steps, int channels = kStateDim)
      : batch_(batch), agents_(agents), steps_(steps), channels_(channels),
        data_(static_cast<std::size_t>(batch * agents * steps * channels), 0.0) {}

  int batch() const { return batch_; }
  int agents() const { return agents_; }
  int steps() const { return steps_; }
  int channels() const { return channels_; }
  int flat_dim() const { return steps_ * channels_; }

  double& at(int b, int p, int t, int c) { return data_[index(b, p, t, c)]; }
  double at(int b, int p, int t, int c) const { return data_[index(b, p, t, c)]; }

  Eigen::Map<RowMatrix> flat(int b) {
    return {data_.data() + static_cast<std::size_t>(b) * agents_ * flat_dim(), agents_, flat_dim()};
  }
  Eigen::Map<const RowMatrix> flat(int b) const {
    return {data_.data() + static_cast<std::size_t>(b) * agents_ * flat_dim(), agents_, flat_dim()};
  }
  std::span<const double> data() const { return data_; }

  /// Heading recovered from the unit-vector channels.
  double heading(int b, int p, int t) const;

  friend bool operator==(const TrajectoryTensor&, const TrajectoryTensor&) = default;

 private:
  std::size_t index(int b, int p, int t, int c) const {
    return ((static_cast<std::size_t>(b) * agents_ + p) * steps_ + t) * channels_ + c;
  }

  int batch_ = 0;
  int agents_ = 0;
  int steps_ = 0;
  int channels_ = kStateDim;
  std::vector<double> data_;
};

/// Affine normalisation of flattened [T+1, d_s] trajectories with one
/// (mean, std) pair per column. The ego row and neighbour rows keep separate
/// statistics. Inputs with d_s columns use the step-0 statistics.
struct Normalizer {
  static constexpr int kColumns = kStateDim * (kFutureSteps + 1);
  static constexpr double kMinStd = 1e-3;

  std::vector<double> ego_mean = std::vector<double>(kColumns, 0.0);
  std::vector<double> ego_std = std::vector<double>(kColumns, 1.0);
  std::vector<double> nbr_mean = std::vector<double>(kColumns, 0.0);
  std::vector<double> nbr_std = std::vector<double>(kColumns, 1.0);

  /// Fits over the rows of `targets` flagged valid. Row 0 is the ego.
  static Normalizer fit(std::span<const RowMatrix> targets,
                        std::span<const std::vector<std::uint8_t>> valid);

  RowMatrix normalize(const RowMatrix& flat) const;
  RowMatrix denormalize(const RowMatrix& flat) const;

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);
};

}  // namespace mdp
