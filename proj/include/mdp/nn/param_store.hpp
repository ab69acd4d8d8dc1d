#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mdp/nn/tape.hpp"

namespace mdp::nn {

template <class Real>
struct Tensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<Real> value;
  std::vector<Real> ema;
  std::vector<Real> grad;
  bool trainable = true;

  std::size_t size() const { return value.size(); }
};

/// Named parameter tensors with a shape-congruent EMA copy and per-tensor
/// trainable flags.
template <class Real>
class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    Tensor<Real> t;
    t.name = name;
    t.rows = rows;
    t.cols = cols;
    const auto n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    t.value.assign(n, Real(0));
    t.ema.assign(n, Real(0));
    t.grad.assign(n, Real(0));
    tensors_.push_back(std::move(t));
    index_[name] = static_cast<int>(tensors_.size()) - 1;
    return static_cast<int>(tensors_.size()) - 1;
  }

  /// -1 when absent.
  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  int size() const { return static_cast<int>(tensors_.size()); }
  Tensor<Real>& operator[](int i) { return tensors_[static_cast<std::size_t>(i)]; }
  const Tensor<Real>& operator[](int i) const { return tensors_[static_cast<std::size_t>(i)]; }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_)
      if (t.trainable) n += t.size();
    return n;
  }

  /// Leaf on `tape` aliasing tensor i.
  Var leaf(Tape<Real>& tape, int i) const {
    const auto& t = tensors_[static_cast<std::size_t>(i)];
    return tape.external(t.value.data(), t.rows, t.cols, i, t.trainable);
  }

  void zero_grad() {
    for (auto& t : tensors_) std::fill(t.grad.begin(), t.grad.end(), Real(0));
  }

  template <class Matrix>
  void add_grad(int i, const Matrix& g, Real weight = Real(1)) {
    auto& t = tensors_[static_cast<std::size_t>(i)];
    for (int r = 0; r < t.rows; ++r)
      for (int c = 0; c < t.cols; ++c)
        t.grad[static_cast<std::size_t>(r * t.cols + c)] += weight * g(r, c);
  }

  /// Adds every parameter gradient recorded on `tape`.
  void collect(const Tape<Real>& tape, Real weight = Real(1)) {
    tape.for_each_param_grad([&](int slot, const Mat<Real>& g) { add_grad(slot, g, weight); });
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& t : tensors_)
      if (t.trainable)
        for (Real g : t.grad) s += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(s);
  }

  /// Rescales trainable gradients so their global norm is at most `max_norm`;
  /// returns the norm before clipping.
  double clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) {
      const Real f = static_cast<Real>(max_norm / norm);
      for (auto& t : tensors_)
        if (t.trainable)
          for (Real& g : t.grad) g *= f;
    }
    return norm;
  }

  /// ema <- decay * ema + (1 - decay) * live, trainable tensors only.
  void ema_update(double decay) {
    if (!(decay > 0.0 && decay < 1.0) && decay != 0.0)
      throw std::invalid_argument("ema decay must lie in [0, 1)");
    const Real d = static_cast<Real>(decay);
    for (auto& t : tensors_) {
      if (!t.trainable) continue;
      for (std::size_t k = 0; k < t.value.size(); ++k) t.ema[k] = d * t.ema[k] + (Real(1) - d) * t.value[k];
    }
  }

  void reset_ema() {
    for (auto& t : tensors_) t.ema = t.value;
  }

  void set_all_trainable(bool flag) {
    for (auto& t : tensors_) t.trainable = flag;
  }

  template <class Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& t : tensors_) {
      const int i = out.add(t.name, t.rows, t.cols);
      auto& o = out[i];
      std::transform(t.value.begin(), t.value.end(), o.value.begin(), [](Real v) { return static_cast<Other>(v); });
      std::transform(t.ema.begin(), t.ema.end(), o.ema.begin(), [](Real v) { return static_cast<Other>(v); });
      o.trainable = t.trainable;
    }
    return out;
  }

  /// Replaces tensor `name` by copies named by `new_names` (appended at the
  /// end, values and EMA duplicated).
  void split(const std::string& name, const std::vector<std::string>& new_names) {
    const int i = find(name);
    if (i < 0) throw std::invalid_argument("no parameter " + name);
    Tensor<Real> src = tensors_[static_cast<std::size_t>(i)];
    tensors_.erase(tensors_.begin() + i);
    index_.clear();
    for (std::size_t k = 0; k < tensors_.size(); ++k) index_[tensors_[k].name] = static_cast<int>(k);
    for (const auto& n : new_names) {
      Tensor<Real> c = src;
      c.name = n;
      tensors_.push_back(std::move(c));
      index_[n] = static_cast<int>(tensors_.size()) - 1;
    }
  }

  /// L2 distance between live values over tensors selected by `pred`.
  template <class Pred>
  double delta_norm(const ParamStore& other, Pred&& pred) const {
    double s = 0.0;
    for (const auto& t : tensors_) {
      if (!pred(t.name)) continue;
      const int j = other.find(t.name);
      if (j < 0) throw std::invalid_argument("missing parameter " + t.name);
      const auto& o = other[j];
      for (std::size_t k = 0; k < t.value.size(); ++k) {
        const double d = static_cast<double>(t.value[k]) - static_cast<double>(o.value[k]);
        s += d * d;
      }
    }
    return std::sqrt(s);
  }

 private:
  std::vector<Tensor<Real>> tensors_;
  std::unordered_map<std::string, int> index_;
};

/// Truncated normal (two standard deviations) draw.
template <class Real>
void init_truncated_normal(Tensor<Real>& t, double stdev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (Real& v : t.value) {
    double z;
    do z = n(rng);
    while (std::abs(z) > 2.0);
    v = static_cast<Real>(z * stdev);
  }
}

/// Adaptive moment estimation over the trainable tensors of a store.
template <class Real>
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<Real>& store, double lr) {
    if (m_.size() != static_cast<std::size_t>(store.size())) {
      m_.assign(static_cast<std::size_t>(store.size()), {});
      v_.assign(static_cast<std::size_t>(store.size()), {});
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (int i = 0; i < store.size(); ++i) {
      auto& p = store[i];
      if (!p.trainable) continue;
      auto& m = m_[static_cast<std::size_t>(i)];
      auto& v = v_[static_cast<std::size_t>(i)];
      if (m.size() != p.size()) {
        m.assign(p.size(), 0.0);
        v.assign(p.size(), 0.0);
      }
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double g = static_cast<double>(p.grad[k]);
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
        const double upd = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        p.value[k] = static_cast<Real>(static_cast<double>(p.value[k]) - upd);
      }
    }
  }

  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Gradient descent with heavy-ball momentum over the trainable tensors.
template <class Real>
class Sgd {
 public:
  explicit Sgd(double momentum = 0.9) : momentum_(momentum) {}

  void step(ParamStore<Real>& store, double lr) {
    if (vel_.size() != static_cast<std::size_t>(store.size())) vel_.assign(static_cast<std::size_t>(store.size()), {});
    for (int i = 0; i < store.size(); ++i) {
      auto& p = store[i];
      if (!p.trainable) continue;
      auto& v = vel_[static_cast<std::size_t>(i)];
      if (v.size() != p.size()) v.assign(p.size(), 0.0);
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = momentum_ * v[k] + static_cast<double>(p.grad[k]);
        p.value[k] = static_cast<Real>(static_cast<double>(p.value[k]) - lr * v[k]);
      }
    }
  }

 private:
  double momentum_;
  std::vector<std::vector<double>> vel_;
};

/// Cosine decay from `base` to zero over `total` steps.
inline double cosine_lr(double base, long step, long total) {
  if (total <= 0) return base;
  const double u = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * u));
}

}  // namespace mdp::nn
