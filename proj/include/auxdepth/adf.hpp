#pragma once

// Auxiliary Depth Feature module: an auxiliary head predicts per-pixel
// depth-bin distributions, per-bin prototypes aggregate pixel features under
// those distributions, and the prototypes project back to enhance the map.
// The fused output is a 1x1 convolution over [refined features, enhanced
// features].

#include <utility>

#include "auxdepth/params.hpp"
#include "auxdepth/tensor.hpp"

namespace auxdepth {

enum class AdfAttention { Distribution, Similarity };

struct AdfConfig {
  Index channels = 64;
  Index depth_bins = 32;
  Index dilation = 4;
  bool enable_prototype_enhancement = true;
  AdfAttention attention = AdfAttention::Distribution;
};

template <typename S>
struct AdfWeights {
  Tensor<S> refine_w, refine_b;  // dilated 3x3, C -> C
  Tensor<S> aux1_w, aux1_b;      // 3x3, C -> C
  Tensor<S> aux2_w, aux2_b;      // 3x3, C -> D
  Tensor<S> fuse_w, fuse_b;      // 1x1, 2C -> C
  Tensor<S> sim_w;               // [D, C], similarity attention only

  static AdfWeights create(ParameterStore<S>& store, const std::string& prefix,
                           const AdfConfig& cfg, Rng& rng) {
    AdfWeights w;
    const Index c = cfg.channels, d = cfg.depth_bins;
    w.refine_w = store.create(prefix + ".refine.w", {c, c, 3, 3}, c * 9, rng);
    w.refine_b = store.create_zeros(prefix + ".refine.b", {c});
    w.aux1_w = store.create(prefix + ".aux1.w", {c, c, 3, 3}, c * 9, rng);
    w.aux1_b = store.create_zeros(prefix + ".aux1.b", {c});
    w.aux2_w = store.create(prefix + ".aux2.w", {d, c, 3, 3}, c * 9, rng);
    w.aux2_b = store.create_zeros(prefix + ".aux2.b", {d});
    w.fuse_w = store.create(prefix + ".fuse.w", {c, 2 * c, 1, 1}, 2 * c, rng);
    w.fuse_b = store.create_zeros(prefix + ".fuse.b", {c});
    if (cfg.attention == AdfAttention::Similarity)
      w.sim_w = store.create(prefix + ".sim.w", {d, c}, c, rng);
    return w;
  }
};

/// Two 3x3 convolutions (ReLU between) produce depth-bin logits [D,H,W];
/// the distribution is a softmax over the bin axis per pixel.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> predict_depth_distribution(const Tensor<S>& f,
                                                           const AdfWeights<S>& w) {
  if (f.rank() != 3 || f.extent(0) != w.aux1_w.extent(1))
    fail(Error::Kind::Config, "adf: feature channels " + shape_str(f.shape()) +
                                  " do not match the auxiliary head (" +
                                  std::to_string(w.aux1_w.extent(1)) + ")");
  Tensor<S> h = relu(add_channel_bias(
      conv2d(f, w.aux1_w, {.stride = 1, .pad = 1, .dilation = 1, .groups = 1}), w.aux1_b));
  Tensor<S> logits = add_channel_bias(
      conv2d(h, w.aux2_w, {.stride = 1, .pad = 1, .dilation = 1, .groups = 1}), w.aux2_b);
  Tensor<S> dist = softmax(logits, 0);
  return {logits, dist};
}

/// Prototype of each depth bin: the distribution column-normalized over
/// pixels weights a sum of pixel features. Bins with total mass below 1e-8
/// fall back to the global mean feature (uniform weights).
template <typename S>
Tensor<S> compute_prototypes(const Tensor<S>& f_init, const Tensor<S>& dist) {
  if (f_init.rank() != 3 || dist.rank() != 3 || f_init.extent(1) != dist.extent(1) ||
      f_init.extent(2) != dist.extent(2))
    fail(Error::Kind::Dimension, "adf prototypes: spatial extents differ: " +
                                     shape_str(f_init.shape()) + " vs " +
                                     shape_str(dist.shape()));
  const Index c = f_init.extent(0);
  const Index d = dist.extent(0);
  const Index n = dist.extent(1) * dist.extent(2);
  Tensor<S> weights = row_normalize(reshape(dist, {d, n}), static_cast<S>(1e-8));
  Tensor<S> pixels = transpose_last2(reshape(f_init, {c, n}));  // [N, C]
  return matmul(weights, pixels);                               // [D, C]
}

/// Similarity-attention variant: per-bin weights from a learned [D, C]
/// projection of the pixel features, softmax-normalized over pixels.
template <typename S>
Tensor<S> compute_prototypes_similarity(const Tensor<S>& f_init, const Tensor<S>& sim_w) {
  const Index c = f_init.extent(0);
  const Index n = f_init.extent(1) * f_init.extent(2);
  Tensor<S> f2d = reshape(f_init, {c, n});
  Tensor<S> weights = softmax(matmul(sim_w, f2d), 1);  // [D, N], rows sum to 1
  return matmul(weights, transpose_last2(f2d));
}

/// Back-projection: every output pixel is the distribution-weighted convex
/// combination of prototype rows.
template <typename S>
Tensor<S> enhance_features(const Tensor<S>& prototypes, const Tensor<S>& dist) {
  if (prototypes.rank() != 2 || dist.rank() != 3 || prototypes.extent(0) != dist.extent(0))
    fail(Error::Kind::Dimension, "adf enhance: bin counts differ: " +
                                     shape_str(prototypes.shape()) + " vs " +
                                     shape_str(dist.shape()));
  const Index d = dist.extent(0);
  const Index h = dist.extent(1);
  const Index w = dist.extent(2);
  const Index c = prototypes.extent(1);
  Tensor<S> per_pixel = matmul(transpose_last2(reshape(dist, {d, h * w})), prototypes);
  return reshape(transpose_last2(per_pixel), {c, h, w});
}

template <typename S>
struct AdfOutputs {
  Tensor<S> features;  // fused [C,H,W]
  Tensor<S> logits;    // [D,H,W] for the auxiliary depth loss
  Tensor<S> dist;      // softmax of logits over bins
};

/// Full ADF pipeline: dilated 3x3 refinement, auxiliary distribution head,
/// prototype aggregation and enhancement, channel concat, 1x1 fuse back to C
/// channels. Output spatial extents equal the input's for every dilation.
template <typename S>
AdfOutputs<S> adf_forward(const Tensor<S>& f, const AdfWeights<S>& w, const AdfConfig& cfg) {
  const Index dil = cfg.dilation;
  if (dil != 1 && dil != 2 && dil != 4 && dil != 8 && dil != 16)
    fail(Error::Kind::Config,
         "adf: unsupported dilation " + std::to_string(dil) + " (use 1, 2, 4, 8 or 16)");
  Tensor<S> f_init = relu(add_channel_bias(
      conv2d(f, w.refine_w, {.stride = 1, .pad = dil, .dilation = dil, .groups = 1}),
      w.refine_b));
  auto [logits, dist] = predict_depth_distribution(f_init, w);
  Tensor<S> enhanced;
  if (cfg.enable_prototype_enhancement) {
    Tensor<S> prototypes = cfg.attention == AdfAttention::Similarity
                               ? compute_prototypes_similarity(f_init, w.sim_w)
                               : compute_prototypes(f_init, dist);
    enhanced = enhance_features(prototypes, dist);
  } else {
    enhanced = f_init;
  }
  Tensor<S> fused = add_channel_bias(
      conv2d(concat_channels(f_init, enhanced), w.fuse_w,
             {.stride = 1, .pad = 0, .dilation = 1, .groups = 1}),
      w.fuse_b);
  return {fused, logits, dist};
}

}  // namespace auxdepth
