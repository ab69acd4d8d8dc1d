#include "mdp/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mdp/errors.hpp"

namespace mdp {

double TrajectoryTensor::heading(int b, int p, int t) const {
  return std::atan2(at(b, p, t, 3), at(b, p, t, 2));
}

namespace {

struct Moments {
  std::vector<double> sum = std::vector<double>(Normalizer::kColumns, 0.0);
  std::vector<double> sq = std::vector<double>(Normalizer::kColumns, 0.0);
  double count = 0.0;

  void add(const RowMatrix& m, Eigen::Index r) {
    for (int c = 0; c < Normalizer::kColumns; ++c) {
      const double v = m(r, c);
      sum[static_cast<std::size_t>(c)] += v;
      sq[static_cast<std::size_t>(c)] += v * v;
    }
    count += 1.0;
  }

  void finish(std::vector<double>& mean, std::vector<double>& stdev) const {
    if (count == 0.0) return;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = sum[c] / count;
      const double var = std::max(0.0, sq[c] / count - mean[c] * mean[c]);
      stdev[c] = std::max(std::sqrt(var), Normalizer::kMinStd);
    }
  }
};

void check_width(const RowMatrix& flat) {
  if (flat.cols() != Normalizer::kColumns && flat.cols() != kStateDim)
    throw ShapeMismatch("normalizer input must have d_s or d_s * (T+1) columns");
}

std::vector<double> checked_column(const nlohmann::json& j, const char* key, bool positive) {
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != static_cast<std::size_t>(Normalizer::kColumns))
    throw IncompatibleCheckpoint(std::string("normalizer ") + key + " has the wrong length");
  for (double x : v)
    if (!std::isfinite(x) || (positive && !(x > 0.0)))
      throw IncompatibleCheckpoint(std::string("normalizer ") + key + " is invalid");
  return v;
}

}  // namespace

Normalizer Normalizer::fit(std::span<const RowMatrix> targets,
                           std::span<const std::vector<std::uint8_t>> valid) {
  Moments ego, nbr;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const RowMatrix& m = targets[k];
    if (m.cols() != kColumns) throw ShapeMismatch("normalizer fit expects [P, d] targets");
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (!valid[k][static_cast<std::size_t>(r)]) continue;
      (r == 0 ? ego : nbr).add(m, r);
    }
  }
  Normalizer n;
  ego.finish(n.ego_mean, n.ego_std);
  nbr.finish(n.nbr_mean, n.nbr_std);
  return n;
}

RowMatrix Normalizer::normalize(const RowMatrix& flat) const {
  check_width(flat);
  RowMatrix out(flat.rows(), flat.cols());
  for (Eigen::Index r = 0; r < flat.rows(); ++r) {
    const auto& mu = r == 0 ? ego_mean : nbr_mean;
    const auto& sd = r == 0 ? ego_std : nbr_std;
    for (Eigen::Index c = 0; c < flat.cols(); ++c) {
      const auto i = static_cast<std::size_t>(c);
      out(r, c) = (flat(r, c) - mu[i]) / sd[i];
    }
  }
  return out;
}

RowMatrix Normalizer::denormalize(const RowMatrix& flat) const {
  check_width(flat);
  RowMatrix out(flat.rows(), flat.cols());
  for (Eigen::Index r = 0; r < flat.rows(); ++r) {
    const auto& mu = r == 0 ? ego_mean : nbr_mean;
    const auto& sd = r == 0 ? ego_std : nbr_std;
    for (Eigen::Index c = 0; c < flat.cols(); ++c) {
      const auto i = static_cast<std::size_t>(c);
      out(r, c) = flat(r, c) * sd[i] + mu[i];
    }
  }
  return out;
}

nlohmann::json Normalizer::to_json() const {
  return {{"ego_mean", ego_mean}, {"ego_std", ego_std}, {"nbr_mean", nbr_mean}, {"nbr_std", nbr_std}};
}

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  Normalizer n;
  try {
    n.ego_mean = checked_column(j, "ego_mean", false);
    n.ego_std = checked_column(j, "ego_std", true);
    n.nbr_mean = checked_column(j, "nbr_mean", false);
    n.nbr_std = checked_column(j, "nbr_std", true);
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(std::string("normalizer: ") + e.what());
  }
  return n;
}

}  // namespace mdp
