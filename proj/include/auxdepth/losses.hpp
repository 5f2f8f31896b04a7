#pragma once

// Multi-task training objective: focal classification loss, smooth-L1 box
// regression, focal-style depth-bin loss, and their weighted combination.
// The focal and depth losses are fused ops with hand-derived backward rules;
// grad_check covers them in the test suite.

#include <vector>

#include "auxdepth/tensor.hpp"

namespace auxdepth {

struct LossWeights {
  double alpha = 0.25;
  double gamma = 2.0;
  double beta = 1.0;
  double lambda_reg = 1.0;
  double lambda_depth = 1.0;
};

/// Anchor class targets: >= 0 is the positive class id, kNegative is a
/// background anchor, kIgnore drops the anchor from the loss entirely.
constexpr int kNegativeTarget = -1;
constexpr int kIgnoreTarget = -2;

namespace detail {

constexpr double kProbClamp = 1e-7;  // keeps every log finite and losses reproducible

template <typename S>
inline S clamp_prob(S p) {
  const S lo = static_cast<S>(kProbClamp);
  const S hi = S(1) - static_cast<S>(kProbClamp);
  return p < lo ? lo : (p > hi ? hi : p);
}

template <typename S>
inline S pow_g(S base, S e) {
  if (e == S(0)) return S(1);
  return std::pow(base < S(0) ? S(0) : base, e);
}

}  // namespace detail

/// Alpha-balanced focal loss over per-class probabilities p[N, K], summed
/// over anchors and classes and divided by max(N_pos, 1). Positive terms are
/// scaled by alpha, negative terms by 1, so gamma=0 with alpha=1 reduces to
/// plain cross-entropy.
template <typename S>
Tensor<S> focal_loss(const Tensor<S>& p, const std::vector<int>& targets, S alpha, S gamma) {
  if (p.rank() != 2)
    fail(Error::Kind::Dimension, "focal_loss: expected probabilities [N, K], got " +
                                     shape_str(p.shape()));
  const Index n = p.extent(0);
  const Index k = p.extent(1);
  if (static_cast<Index>(targets.size()) != n)
    fail(Error::Kind::Dimension, "focal_loss: " + std::to_string(targets.size()) +
                                     " targets for " + std::to_string(n) + " anchors");
  Index n_pos = 0;
  for (int t : targets)
    if (t >= 0) ++n_pos;
  const S norm = S(1) / static_cast<S>(n_pos > 0 ? n_pos : 1);

  S total = S(0);
  const S* pv = p.data();
  for (Index i = 0; i < n; ++i) {
    if (targets[static_cast<std::size_t>(i)] == kIgnoreTarget) continue;
    for (Index c = 0; c < k; ++c) {
      const S pi = pv[i * k + c];
      if (targets[static_cast<std::size_t>(i)] == static_cast<int>(c)) {
        total += alpha * detail::pow_g(S(1) - pi, gamma) * -std::log(detail::clamp_prob(pi));
      } else {
        total += detail::pow_g(pi, gamma) * -std::log(detail::clamp_prob(S(1) - pi));
      }
    }
  }
  Tensor<S> out = Tensor<S>::scalar(total * norm);

  auto pn = p.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&p}, [pn, on, targets, n, k, alpha, gamma, norm] {
    on->ensure_grad();
    if (!pn->requires_grad) return;
    pn->ensure_grad();
    const S g = on->grad[0] * norm;
    const S lo = static_cast<S>(detail::kProbClamp);
    const S hi = S(1) - static_cast<S>(detail::kProbClamp);
    for (Index i = 0; i < n; ++i) {
      if (targets[static_cast<std::size_t>(i)] == kIgnoreTarget) continue;
      for (Index c = 0; c < k; ++c) {
        const S pi = pn->value[static_cast<std::size_t>(i * k + c)];
        S d;
        if (targets[static_cast<std::size_t>(i)] == static_cast<int>(c)) {
          const S a = detail::pow_g(S(1) - pi, gamma);
          const S da = gamma == S(0) ? S(0) : -gamma * detail::pow_g(S(1) - pi, gamma - S(1));
          const S pc = detail::clamp_prob(pi);
          const S b = -std::log(pc);
          const S db = (pi > lo && pi < hi) ? -S(1) / pc : S(0);
          d = alpha * (da * b + a * db);
        } else {
          const S a = detail::pow_g(pi, gamma);
          const S da = gamma == S(0) ? S(0) : gamma * detail::pow_g(pi, gamma - S(1));
          const S qc = detail::clamp_prob(S(1) - pi);
          const S b = -std::log(qc);
          const S db = (S(1) - pi > lo && S(1) - pi < hi) ? S(1) / qc : S(0);
          d = da * b + a * db;
        }
        pn->grad[static_cast<std::size_t>(i * k + c)] += g * d;
      }
    }
  });
  return out;
}

/// Smooth-L1 (Huber) regression loss: per element, 0.5 x^2 / beta for
/// |x| < beta, else |x| - 0.5 beta; summed over dims, averaged over rows.
template <typename S>
Tensor<S> smooth_l1(const Tensor<S>& pred, const Tensor<S>& target, S beta) {
  detail::check_same_shape(pred, target, "smooth_l1");
  const Index rows = pred.rank() >= 1 && pred.numel() > 0 ? pred.extent(0) : 0;
  if (rows == 0) return Tensor<S>::scalar(S(0));
  const S norm = S(1) / static_cast<S>(rows);
  S total = S(0);
  const S* pv = pred.data();
  const S* tv = target.data();
  const Index n = pred.numel();
  for (Index i = 0; i < n; ++i) {
    const S x = pv[i] - tv[i];
    const S ax = std::abs(x);
    total += ax < beta ? S(0.5) * x * x / beta : ax - S(0.5) * beta;
  }
  Tensor<S> out = Tensor<S>::scalar(total * norm);
  auto pn = pred.node_ptr();
  auto tn = target.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&pred, &target}, [pn, tn, on, beta, norm, n] {
    on->ensure_grad();
    const S g = on->grad[0] * norm;
    for (int side = 0; side < 2; ++side) {
      auto& node = side == 0 ? pn : tn;
      if (!node->requires_grad) continue;
      node->ensure_grad();
      const S sign = side == 0 ? S(1) : S(-1);
      for (Index i = 0; i < n; ++i) {
        const S x = pn->value[static_cast<std::size_t>(i)] -
                    tn->value[static_cast<std::size_t>(i)];
        const S d = std::abs(x) < beta ? x / beta : (x > S(0) ? S(1) : S(-1));
        node->grad[static_cast<std::size_t>(i)] += sign * g * d;
      }
    }
  });
  return out;
}

constexpr int kNoDepthTarget = -1;

template <typename S>
struct DepthLossResult {
  Tensor<S> loss;
  bool supervised = false;  // false when every pixel carried the sentinel
};

/// Focal-style depth-bin loss on raw logits [D, ...spatial]: softmax over the
/// bin axis, then -(1 - p_gt)^gamma * log(p_gt) averaged over supervised
/// pixels. Pixels with kNoDepthTarget are excluded from the mean.
template <typename S>
DepthLossResult<S> depth_loss(const Tensor<S>& logits, const std::vector<int>& gt_bins,
                              S gamma) {
  if (logits.rank() < 2)
    fail(Error::Kind::Dimension, "depth_loss: expected logits [D, ...], got " +
                                     shape_str(logits.shape()));
  const Index d = logits.extent(0);
  const Index n = logits.numel() / d;
  if (static_cast<Index>(gt_bins.size()) != n)
    fail(Error::Kind::Dimension, "depth_loss: " + std::to_string(gt_bins.size()) +
                                     " bin targets for " + std::to_string(n) + " pixels");
  Index n_sup = 0;
  for (int b : gt_bins) {
    if (b != kNoDepthTarget && (b < 0 || b >= d))
      fail(Error::Kind::Bounds, "depth_loss: bin target " + std::to_string(b) +
                                    " outside [0, " + std::to_string(d) + ")");
    if (b != kNoDepthTarget) ++n_sup;
  }
  if (n_sup == 0) return {Tensor<S>::scalar(S(0)), false};
  const S norm = S(1) / static_cast<S>(n_sup);

  // column softmax per pixel, kept for the backward pass
  std::vector<S> probs(static_cast<std::size_t>(logits.numel()));
  const S* zv = logits.data();
  S total = S(0);
  for (Index i = 0; i < n; ++i) {
    S mx = zv[i];
    for (Index j = 1; j < d; ++j) mx = std::max(mx, zv[j * n + i]);
    S denom = S(0);
    for (Index j = 0; j < d; ++j) {
      const S e = std::exp(zv[j * n + i] - mx);
      probs[static_cast<std::size_t>(j * n + i)] = e;
      denom += e;
    }
    const S inv = S(1) / denom;
    for (Index j = 0; j < d; ++j) probs[static_cast<std::size_t>(j * n + i)] *= inv;
    const int b = gt_bins[static_cast<std::size_t>(i)];
    if (b == kNoDepthTarget) continue;
    const S pb = probs[static_cast<std::size_t>(b * n + i)];
    total += detail::pow_g(S(1) - pb, gamma) * -std::log(detail::clamp_prob(pb));
  }
  Tensor<S> out = Tensor<S>::scalar(total * norm);

  auto zn = logits.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&logits},
                    [zn, on, gt_bins, d, n, gamma, norm, probs = std::move(probs)] {
    on->ensure_grad();
    if (!zn->requires_grad) return;
    zn->ensure_grad();
    const S g = on->grad[0] * norm;
    const S lo = static_cast<S>(detail::kProbClamp);
    const S hi = S(1) - static_cast<S>(detail::kProbClamp);
    for (Index i = 0; i < n; ++i) {
      const int b = gt_bins[static_cast<std::size_t>(i)];
      if (b == kNoDepthTarget) continue;
      const S pb = probs[static_cast<std::size_t>(b * n + i)];
      const S a = detail::pow_g(S(1) - pb, gamma);
      const S da = gamma == S(0) ? S(0) : -gamma * detail::pow_g(S(1) - pb, gamma - S(1));
      const S pc = detail::clamp_prob(pb);
      const S lg = -std::log(pc);
      const S dlg = (pb > lo && pb < hi) ? -S(1) / pc : S(0);
      const S dterm_dpb = da * lg + a * dlg;
      for (Index j = 0; j < d; ++j) {
        const S pj = probs[static_cast<std::size_t>(j * n + i)];
        const S dpb_dzj = pb * ((j == b ? S(1) : S(0)) - pj);
        zn->grad[static_cast<std::size_t>(j * n + i)] += g * dterm_dpb * dpb_dzj;
      }
    }
  });
  return {out, true};
}

/// L_total = L_cls + lambda_reg * L_reg + lambda_depth * L_depth.
template <typename S>
Tensor<S> total_loss(const Tensor<S>& cls, const Tensor<S>& reg, const Tensor<S>& depth,
                     const LossWeights& w) {
  Tensor<S> weighted = add(scalar_mul(reg, static_cast<S>(w.lambda_reg)),
                           scalar_mul(depth, static_cast<S>(w.lambda_depth)));
  return add(cls, weighted);
}

}  // namespace auxdepth
