#pragma once

#include <vector>

#include "json.hpp"
#include "mdp/trajectory.hpp"

namespace mdp {

enum class ScheduleKind { linear };

struct ScheduleParams {
  int T_diff = 100;
  double beta_min = 1e-4;
  double beta_max = 2e-2;
  ScheduleKind kind = ScheduleKind::linear;

  nlohmann::json to_json() const;
  static ScheduleParams from_json(const nlohmann::json& j);
  friend bool operator==(const ScheduleParams&, const ScheduleParams&) = default;
};

/// beta_max used by the training and sampling pipeline.
inline constexpr double kPipelineBetaMax = 0.2;

/// Discrete variance-preserving schedule. Index 0 is the clean sample
/// (alpha_bar = 1); indices 1..T_diff are noising steps. Non-integer times
/// interpolate log alpha_bar linearly.
struct DiffusionSchedule {
  ScheduleParams params;
  std::vector<double> beta;       // [T+1], beta[0] = 0
  std::vector<double> alpha;      // sqrt(1 - beta)
  std::vector<double> alpha_bar;  // cumulative product of (1 - beta)
  std::vector<double> sigma;      // sqrt(1 - alpha_bar)

  int T() const { return params.T_diff; }
  double alpha_bar_at(double t) const;
  double signal(double t) const;  // sqrt(alpha_bar)
  double noise(double t) const;   // sqrt(1 - alpha_bar)
  /// Half-log-SNR log(signal / noise); +inf at t = 0.
  double lambda(double t) const;
  /// Inverse of lambda on [0, T].
  double t_of_lambda(double lam) const;
};

/// Throws BadScheduleParams unless 0 < beta_min < beta_max < 1 and T_diff >= 1.
DiffusionSchedule make_schedule(int T_diff, double beta_min = 1e-4, double beta_max = 2e-2,
                                ScheduleKind kind = ScheduleKind::linear);
DiffusionSchedule make_schedule(const ScheduleParams& p);

/// sqrt(ab_t) x0 + sqrt(1 - ab_t) eps. With `hard_constraint` the step-0
/// columns keep their clean value.
RowMatrix add_noise(const DiffusionSchedule& sched, const RowMatrix& x0, double t, const RowMatrix& eps,
                    bool hard_constraint = true);

}  // namespace mdp
