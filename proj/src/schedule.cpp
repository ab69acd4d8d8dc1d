#include "mdp/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdp/errors.hpp"

namespace mdp {

nlohmann::json ScheduleParams::to_json() const {
  return {{"T_diff", T_diff}, {"beta_min", beta_min}, {"beta_max", beta_max}, {"kind", "linear"}};
}

ScheduleParams ScheduleParams::from_json(const nlohmann::json& j) {
  ScheduleParams p;
  p.T_diff = j.value("T_diff", p.T_diff);
  p.beta_min = j.value("beta_min", p.beta_min);
  p.beta_max = j.value("beta_max", p.beta_max);
  if (j.value("kind", std::string("linear")) != "linear") throw BadScheduleParams("unknown schedule kind");
  return p;
}

DiffusionSchedule make_schedule(int T_diff, double beta_min, double beta_max, ScheduleKind kind) {
  if (T_diff < 1) throw BadScheduleParams("T_diff must be at least 1");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
    throw BadScheduleParams("require 0 < beta_min < beta_max < 1");
  DiffusionSchedule s;
  s.params = {T_diff, beta_min, beta_max, kind};
  const auto n = static_cast<std::size_t>(T_diff) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.sigma.assign(n, 0.0);
  for (int i = 1; i <= T_diff; ++i) {
    const double u = T_diff == 1 ? 0.0 : static_cast<double>(i - 1) / (T_diff - 1);
    const auto k = static_cast<std::size_t>(i);
    s.beta[k] = beta_min + (beta_max - beta_min) * u;
    s.alpha[k] = std::sqrt(1.0 - s.beta[k]);
    s.alpha_bar[k] = s.alpha_bar[k - 1] * (1.0 - s.beta[k]);
    s.sigma[k] = std::sqrt(1.0 - s.alpha_bar[k]);
  }
  return s;
}

DiffusionSchedule make_schedule(const ScheduleParams& p) {
  return make_schedule(p.T_diff, p.beta_min, p.beta_max, p.kind);
}

double DiffusionSchedule::alpha_bar_at(double t) const {
  t = std::clamp(t, 0.0, static_cast<double>(T()));
  const auto i = static_cast<std::size_t>(std::floor(t));
  if (i >= static_cast<std::size_t>(T())) return alpha_bar.back();
  const double f = t - static_cast<double>(i);
  if (f == 0.0) return alpha_bar[i];
  return std::exp((1.0 - f) * std::log(alpha_bar[i]) + f * std::log(alpha_bar[i + 1]));
}

double DiffusionSchedule::signal(double t) const { return std::sqrt(alpha_bar_at(t)); }

double DiffusionSchedule::noise(double t) const { return std::sqrt(1.0 - alpha_bar_at(t)); }

double DiffusionSchedule::lambda(double t) const {
  const double log_ab = std::log(alpha_bar_at(t));
  const double one_minus = -std::expm1(log_ab);
  if (one_minus <= 0.0) return std::numeric_limits<double>::infinity();
  return 0.5 * (log_ab - std::log(one_minus));
}

double DiffusionSchedule::t_of_lambda(double lam) const {
  double lo = 0.0;
  double hi = static_cast<double>(T());
  if (lam >= lambda(std::nextafter(0.0, 1.0))) return 0.0;
  if (lam <= lambda(hi)) return hi;
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (lambda(mid) > lam)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

RowMatrix add_noise(const DiffusionSchedule& sched, const RowMatrix& x0, double t, const RowMatrix& eps,
                    bool hard_constraint) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw ShapeMismatch("x0 and eps shapes differ");
  if (!(t >= 0.0 && t <= sched.T())) throw BadScheduleParams("t outside [0, T_diff]");
  const double a = sched.signal(t);
  const double s = sched.noise(t);
  RowMatrix xt = a * x0 + s * eps;
  if (hard_constraint) xt.leftCols(std::min<Eigen::Index>(kStateDim, x0.cols())) = x0.leftCols(std::min<Eigen::Index>(kStateDim, x0.cols()));
  return xt;
}

}  // namespace mdp
