#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "mdp/nn/tape.hpp"

namespace mdp::nn {

using Mask = std::vector<std::uint8_t>;

// Differentiable primitives. Every op reads its inputs' values from the tape
// and registers a closure that pushes the output gradient back.

template <class Real>
Var matmul(Tape<Real>& t, Var a, Var b) {
  using M = Mat<Real>;
  M out = t.value(a) * t.value(b);
  return t.op(std::move(out), {a, b}, [a, b](Tape<Real>& tp, const M& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

/// a * b^T
template <class Real>
Var matmul_nt(Tape<Real>& t, Var a, Var b) {
  using M = Mat<Real>;
  M out = t.value(a) * t.value(b).transpose();
  return t.op(std::move(out), {a, b}, [a, b](Tape<Real>& tp, const M& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b));
    if (tp.requires_grad(b)) tp.accumulate(b, g.transpose() * tp.value(a));
  });
}

template <class Real>
Var add(Tape<Real>& t, Var a, Var b) {
  using M = Mat<Real>;
  M out = t.value(a) + t.value(b);
  return t.op(std::move(out), {a, b}, [a, b](Tape<Real>& tp, const M& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <class Real>
Var sub(Tape<Real>& t, Var a, Var b) {
  using M = Mat<Real>;
  M out = t.value(a) - t.value(b);
  return t.op(std::move(out), {a, b}, [a, b](Tape<Real>& tp, const M& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

/// a + row, broadcasting a [1, m] row over every row of a.
template <class Real>
Var add_row(Tape<Real>& t, Var a, Var row) {
  using M = Mat<Real>;
  M out = t.value(a);
  out.rowwise() += t.value(row).row(0);
  return t.op(std::move(out), {a, row}, [a, row](Tape<Real>& tp, const M& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

template <class Real>
Var mul(Tape<Real>& t, Var a, Var b) {
  using M = Mat<Real>;
  M out = t.value(a).cwiseProduct(t.value(b));
  return t.op(std::move(out), {a, b}, [a, b](Tape<Real>& tp, const M& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

/// a * row element-wise, broadcasting a [1, m] row.
template <class Real>
Var mul_row(Tape<Real>& t, Var a, Var row) {
  using M = Mat<Real>;
  M out = t.value(a).array().rowwise() * t.value(row).row(0).array();
  return t.op(std::move(out), {a, row}, [a, row](Tape<Real>& tp, const M& g) {
    if (tp.requires_grad(a))
      tp.accumulate(a, (g.array().rowwise() * tp.value(row).row(0).array()).matrix());
    if (tp.requires_grad(row))
      tp.accumulate(row, g.cwiseProduct(tp.value(a)).colwise().sum());
  });
}

template <class Real>
Var scale(Tape<Real>& t, Var a, Real c) {
  using M = Mat<Real>;
  M out = t.value(a) * c;
  return t.op(std::move(out), {a}, [a, c](Tape<Real>& tp, const M& g) { tp.accumulate(a, g * c); });
}

template <class Real>
Var add_const(Tape<Real>& t, Var a, Real c) {
  using M = Mat<Real>;
  M out = t.value(a).array() + c;
  return t.op(std::move(out), {a}, [a](Tape<Real>& tp, const M& g) { tp.accumulate(a, g); });
}

/// Multiplies row i by mask[i] (0 or 1).
template <class Real>
Var mask_rows(Tape<Real>& t, Var a, const Mask& mask) {
  using M = Mat<Real>;
  M out = t.value(a);
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    if (!mask[static_cast<std::size_t>(r)]) out.row(r).setZero();
  return t.op(std::move(out), {a}, [a, mask](Tape<Real>& tp, const M& g) {
    M ga = g;
    for (Eigen::Index r = 0; r < ga.rows(); ++r)
      if (!mask[static_cast<std::size_t>(r)]) ga.row(r).setZero();
    tp.accumulate(a, ga);
  });
}

/// tanh-approximated GELU.
template <class Real>
Var gelu(Tape<Real>& t, Var a) {
  using M = Mat<Real>;
  const Real k = static_cast<Real>(std::sqrt(2.0 / std::numbers::pi));
  const Real c = static_cast<Real>(0.044715);
  M x = t.value(a);
  M out = x.unaryExpr([k, c](Real v) {
    return Real(0.5) * v * (Real(1) + std::tanh(k * (v + c * v * v * v)));
  });
  return t.op(std::move(out), {a}, [a, k, c](Tape<Real>& tp, const M& g) {
    M d = tp.value(a).unaryExpr([k, c](Real v) {
      const Real u = k * (v + c * v * v * v);
      const Real th = std::tanh(u);
      const Real du = k * (Real(1) + Real(3) * c * v * v);
      return Real(0.5) * (Real(1) + th) + Real(0.5) * v * (Real(1) - th * th) * du;
    });
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

template <class Real>
Var silu(Tape<Real>& t, Var a) {
  using M = Mat<Real>;
  M out = t.value(a).unaryExpr([](Real v) { return v / (Real(1) + std::exp(-v)); });
  return t.op(std::move(out), {a}, [a](Tape<Real>& tp, const M& g) {
    M d = tp.value(a).unaryExpr([](Real v) {
      const Real s = Real(1) / (Real(1) + std::exp(-v));
      return s * (Real(1) + v * (Real(1) - s));
    });
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

/// Row-wise normalisation to zero mean and unit variance (no affine part).
template <class Real>
Var layer_norm(Tape<Real>& t, Var a, Real eps = Real(1e-5)) {
  using M = Mat<Real>;
  const auto x = t.value(a);
  const Eigen::Index n = x.cols();
  M out(x.rows(), n);
  Eigen::Matrix<Real, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Real mu = x.row(r).mean();
    const Real var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = Real(1) / std::sqrt(var + eps);
    out.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  M xhat = out;
  return t.op(std::move(out), {a}, [a, xhat = std::move(xhat), inv_std](Tape<Real>& tp, const M& g) {
    M ga(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const Real mg = g.row(r).mean();
      const Real mgx = g.row(r).cwiseProduct(xhat.row(r)).mean();
      ga.row(r) = (g.row(r).array() - mg - xhat.row(r).array() * mgx) * inv_std(r);
    }
    tp.accumulate(a, ga);
  });
}

/// Row-wise softmax over columns flagged in `key_mask`; masked columns get
/// exactly zero weight (their logits are treated as -inf).
template <class Real>
Var softmax_masked(Tape<Real>& t, Var a, const Mask& key_mask) {
  using M = Mat<Real>;
  const auto x = t.value(a);
  M out = M::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (key_mask[static_cast<std::size_t>(c)]) mx = std::max(mx, x(r, c));
    Real sum = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (key_mask[static_cast<std::size_t>(c)]) {
        out(r, c) = std::exp(x(r, c) - mx);
        sum += out(r, c);
      }
    if (sum > 0) out.row(r) /= sum;
  }
  M y = out;
  return t.op(std::move(out), {a}, [a, y = std::move(y)](Tape<Real>& tp, const M& g) {
    M ga(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const Real dot = g.row(r).dot(y.row(r));
      ga.row(r) = y.row(r).array() * (g.row(r).array() - dot);
    }
    tp.accumulate(a, ga);
  });
}

template <class Real>
Var slice_cols(Tape<Real>& t, Var a, int c0, int n) {
  using M = Mat<Real>;
  M out = t.value(a).middleCols(c0, n);
  const int rows = t.rows(a);
  const int cols = t.cols(a);
  return t.op(std::move(out), {a}, [a, c0, n, rows, cols](Tape<Real>& tp, const M& g) {
    M ga = M::Zero(rows, cols);
    ga.middleCols(c0, n) = g;
    tp.accumulate(a, ga);
  });
}

template <class Real>
Var slice_rows(Tape<Real>& t, Var a, int r0, int n) {
  using M = Mat<Real>;
  M out = t.value(a).middleRows(r0, n);
  const int rows = t.rows(a);
  const int cols = t.cols(a);
  return t.op(std::move(out), {a}, [a, r0, n, rows, cols](Tape<Real>& tp, const M& g) {
    M ga = M::Zero(rows, cols);
    ga.middleRows(r0, n) = g;
    tp.accumulate(a, ga);
  });
}

template <class Real>
Var concat_cols(Tape<Real>& t, const std::vector<Var>& parts) {
  using M = Mat<Real>;
  int cols = 0;
  for (Var p : parts) cols += t.cols(p);
  M out(t.rows(parts.front()), cols);
  std::vector<int> offsets;
  int c = 0;
  for (Var p : parts) {
    offsets.push_back(c);
    out.middleCols(c, t.cols(p)) = t.value(p);
    c += t.cols(p);
  }
  return t.op_many(std::move(out), parts, [parts, offsets](Tape<Real>& tp, const M& g) {
    for (std::size_t i = 0; i < parts.size(); ++i)
      if (tp.requires_grad(parts[i])) tp.accumulate(parts[i], g.middleCols(offsets[i], tp.cols(parts[i])));
  });
}

template <class Real>
Var concat_rows(Tape<Real>& t, const std::vector<Var>& parts) {
  using M = Mat<Real>;
  int rows = 0;
  for (Var p : parts) rows += t.rows(p);
  M out(rows, t.cols(parts.front()));
  std::vector<int> offsets;
  int r = 0;
  for (Var p : parts) {
    offsets.push_back(r);
    out.middleRows(r, t.rows(p)) = t.value(p);
    r += t.rows(p);
  }
  return t.op_many(std::move(out), parts, [parts, offsets](Tape<Real>& tp, const M& g) {
    for (std::size_t i = 0; i < parts.size(); ++i)
      if (tp.requires_grad(parts[i])) tp.accumulate(parts[i], g.middleRows(offsets[i], tp.rows(parts[i])));
  });
}

/// Treats `a` as `blocks` stacked [L, C] blocks and transposes each block,
/// giving `blocks` stacked [C, L] blocks.
template <class Real>
Var block_transpose(Tape<Real>& t, Var a, int blocks) {
  using M = Mat<Real>;
  const auto x = t.value(a);
  const int L = static_cast<int>(x.rows()) / blocks;
  const int C = static_cast<int>(x.cols());
  M out(blocks * C, L);
  for (int b = 0; b < blocks; ++b) out.middleRows(b * C, C) = x.middleRows(b * L, L).transpose();
  return t.op(std::move(out), {a}, [a, blocks, L, C](Tape<Real>& tp, const M& g) {
    M ga(blocks * L, C);
    for (int b = 0; b < blocks; ++b) ga.middleRows(b * L, L) = g.middleRows(b * C, C).transpose();
    tp.accumulate(a, ga);
  });
}

/// Mean over each group of `rows / groups` consecutive rows: [G*L, C] -> [G, C].
template <class Real>
Var segment_mean_rows(Tape<Real>& t, Var a, int groups) {
  using M = Mat<Real>;
  const auto x = t.value(a);
  const int L = static_cast<int>(x.rows()) / groups;
  M out(groups, x.cols());
  for (int gi = 0; gi < groups; ++gi) out.row(gi) = x.middleRows(gi * L, L).colwise().mean();
  return t.op(std::move(out), {a}, [a, groups, L](Tape<Real>& tp, const M& g) {
    M ga(groups * L, g.cols());
    for (int gi = 0; gi < groups; ++gi)
      for (int k = 0; k < L; ++k) ga.row(gi * L + k) = g.row(gi) / Real(L);
    tp.accumulate(a, ga);
  });
}

/// Mean over rows flagged in `mask` -> [1, C]; zero row if none flagged.
template <class Real>
Var masked_mean_rows(Tape<Real>& t, Var a, const Mask& mask) {
  using M = Mat<Real>;
  const auto x = t.value(a);
  Real count = 0;
  M out = M::Zero(1, x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    if (mask[static_cast<std::size_t>(r)]) {
      out += x.row(r);
      count += 1;
    }
  if (count > 0) out /= count;
  return t.op(std::move(out), {a}, [a, mask, count](Tape<Real>& tp, const M& g) {
    M ga = M::Zero(static_cast<Eigen::Index>(mask.size()), g.cols());
    if (count > 0)
      for (Eigen::Index r = 0; r < ga.rows(); ++r)
        if (mask[static_cast<std::size_t>(r)]) ga.row(r) = g / count;
    tp.accumulate(a, ga);
  });
}

/// sum(w .* (a - target)^2) as a 1x1 node; `target` and `w` are constants.
template <class Real>
Var weighted_sq_error(Tape<Real>& t, Var a, const Mat<Real>& target, const Mat<Real>& w) {
  using M = Mat<Real>;
  M diff = t.value(a) - target;
  M out(1, 1);
  out(0, 0) = diff.cwiseProduct(diff).cwiseProduct(w).sum();
  return t.op(std::move(out), {a}, [a, diff = std::move(diff), w](Tape<Real>& tp, const M& g) {
    tp.accumulate(a, (Real(2) * g(0, 0)) * diff.cwiseProduct(w));
  });
}

template <class Real>
Var sum_all(Tape<Real>& t, Var a) {
  using M = Mat<Real>;
  M out(1, 1);
  out(0, 0) = t.value(a).sum();
  const int rows = t.rows(a);
  const int cols = t.cols(a);
  return t.op(std::move(out), {a}, [a, rows, cols](Tape<Real>& tp, const M& g) {
    tp.accumulate(a, M::Constant(rows, cols, g(0, 0)));
  });
}

}  // namespace mdp::nn
