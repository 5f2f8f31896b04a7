#pragma once

// DepthFusion Transformer: linear-attention encoder over context features,
// Depth Position Mapping, and a decoder whose queries come from the
// depth-sensitive stream while keys/values come from the encoded context.

#include <string>

#include "auxdepth/params.hpp"
#include "auxdepth/tensor.hpp"

namespace auxdepth {

enum class AttentionKind { Linear, Softmax };

struct DftConfig {
  Index width = 64;
  Index heads = 4;
  Index enc_layers = 2;
  Index dec_layers = 2;
  AttentionKind encoder_attention = AttentionKind::Linear;
  enum class QuerySource { Depth, Learned } query_source = QuerySource::Depth;
  Index ffn_dim() const { return 2 * width; }
};

constexpr double kLayerNormEps = 1e-5;

/// softmax(q k^T / sqrt(head_dim)) v over the last two axes; any leading
/// batch dims.
template <typename S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
  if (k.shape() != v.shape())
    fail(Error::Kind::Dimension, "attention: key shape " + shape_str(k.shape()) +
                                     " differs from value shape " + shape_str(v.shape()));
  const Index dh = q.extent(q.rank() - 1);
  if (k.extent(k.rank() - 1) != dh)
    fail(Error::Kind::Dimension, "attention: query dim " + std::to_string(dh) +
                                     " does not match key dim " +
                                     std::to_string(k.extent(k.rank() - 1)));
  Tensor<S> scores = scalar_mul(matmul(q, transpose_last2(k)),
                                static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
  return matmul(softmax(scores, scores.rank() - 1), v);
}

/// Linear attention with the strictly positive feature map ELU(x)+1:
/// out_i = phi(q_i) (sum_j phi(k_j)^T v_j) / (phi(q_i) . sum_j phi(k_j)).
/// Each output row is a convex combination of value rows.
template <typename S>
Tensor<S> linear_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
  if (k.shape() != v.shape())
    fail(Error::Kind::Dimension, "linear_attention: key shape " + shape_str(k.shape()) +
                                     " differs from value shape " + shape_str(v.shape()));
  const Index dh = q.extent(q.rank() - 1);
  if (k.extent(k.rank() - 1) != dh)
    fail(Error::Kind::Dimension, "linear_attention: query/key dims differ");
  Tensor<S> fq = elu_plus_one(q);
  Tensor<S> fk = elu_plus_one(k);
  Tensor<S> kv = matmul(transpose_last2(fk), v);  // [.., Dh, Dh]
  Tensor<S> numer = matmul(fq, kv);               // [.., L, Dh]
  Shape ksum_shape = fk.shape();
  ksum_shape[ksum_shape.size() - 2] = 1;
  Tensor<S> ksum = reshape(sum_axis(fk, fk.rank() - 2), ksum_shape);  // [.., 1, Dh]
  Tensor<S> denom = matmul(fq, transpose_last2(ksum));                // [.., L, 1]
  Shape row_shape(denom.shape().begin(), denom.shape().end() - 1);
  return scale_rows(numer, reciprocal(reshape(denom, row_shape)));
}

template <typename S>
struct MhaWeights {
  Tensor<S> wq, wk, wv, wo;  // all [C, C], no biases

  static MhaWeights create(ParameterStore<S>& store, const std::string& prefix, Index c,
                           Rng& rng) {
    MhaWeights w;
    w.wq = store.create(prefix + ".wq", {c, c}, c, rng);
    w.wk = store.create(prefix + ".wk", {c, c}, c, rng);
    w.wv = store.create(prefix + ".wv", {c, c}, c, rng);
    w.wo = store.create(prefix + ".wo", {c, c}, c, rng);
    return w;
  }
};

namespace detail {

template <typename S>
Tensor<S> split_heads(const Tensor<S>& x, Index heads) {
  const Index b = x.extent(0), l = x.extent(1), c = x.extent(2);
  return permute(reshape(x, {b, l, heads, c / heads}), {0, 2, 1, 3});  // [B,H,L,Dh]
}

template <typename S>
Tensor<S> merge_heads(const Tensor<S>& x) {
  const Index b = x.extent(0), h = x.extent(1), l = x.extent(2), dh = x.extent(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, l, h * dh});
}

}  // namespace detail

/// Multi-head attention over sequences [B, L, C]; keys and values come from
/// `kv_seq`, whose length may differ from the query length.
template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& q_seq, const Tensor<S>& kv_seq,
                               const MhaWeights<S>& w, Index heads, AttentionKind kind) {
  if (q_seq.rank() != 3 || kv_seq.rank() != 3 || q_seq.extent(2) != kv_seq.extent(2))
    fail(Error::Kind::Config, "multi_head_attention: widths differ: " +
                                  shape_str(q_seq.shape()) + " vs " +
                                  shape_str(kv_seq.shape()));
  const Index c = q_seq.extent(2);
  if (c % heads != 0)
    fail(Error::Kind::Config, "multi_head_attention: width " + std::to_string(c) +
                                  " not divisible by " + std::to_string(heads) + " heads");
  Tensor<S> q = detail::split_heads(matmul(q_seq, w.wq), heads);
  Tensor<S> k = detail::split_heads(matmul(kv_seq, w.wk), heads);
  Tensor<S> v = detail::split_heads(matmul(kv_seq, w.wv), heads);
  Tensor<S> attended = kind == AttentionKind::Linear ? linear_attention(q, k, v)
                                                     : scaled_dot_attention(q, k, v);
  return matmul(detail::merge_heads(attended), w.wo);
}

template <typename S>
struct LayerNormWeights {
  Tensor<S> gain, bias;

  static LayerNormWeights create(ParameterStore<S>& store, const std::string& prefix,
                                 Index c) {
    LayerNormWeights w;
    w.gain = store.create_const(prefix + ".gain", {c}, S(1));
    w.bias = store.create_zeros(prefix + ".bias", {c});
    return w;
  }
};

template <typename S>
Tensor<S> apply_norm(const Tensor<S>& x, const LayerNormWeights<S>& w) {
  return layer_norm(x, w.gain, w.bias, static_cast<S>(kLayerNormEps));
}

template <typename S>
struct FfnWeights {
  Tensor<S> w1, w2;  // [C, F], [F, C]

  static FfnWeights create(ParameterStore<S>& store, const std::string& prefix, Index c,
                           Index f, Rng& rng) {
    FfnWeights w;
    w.w1 = store.create(prefix + ".w1", {c, f}, c, rng);
    w.w2 = store.create(prefix + ".w2", {f, c}, f, rng);
    return w;
  }
};

template <typename S>
Tensor<S> apply_ffn(const Tensor<S>& x, const FfnWeights<S>& w) {
  return matmul(relu(matmul(x, w.w1)), w.w2);
}

template <typename S>
struct EncoderLayerWeights {
  MhaWeights<S> attn;
  FfnWeights<S> ffn;
  LayerNormWeights<S> norm1, norm2;

  static EncoderLayerWeights create(ParameterStore<S>& store, const std::string& prefix,
                                    const DftConfig& cfg, Rng& rng) {
    EncoderLayerWeights w;
    w.attn = MhaWeights<S>::create(store, prefix + ".attn", cfg.width, rng);
    w.ffn = FfnWeights<S>::create(store, prefix + ".ffn", cfg.width, cfg.ffn_dim(), rng);
    w.norm1 = LayerNormWeights<S>::create(store, prefix + ".norm1", cfg.width);
    w.norm2 = LayerNormWeights<S>::create(store, prefix + ".norm2", cfg.width);
    return w;
  }
};

/// x1 = Norm(x + MultiHead(x)); out = Norm(x1 + FFN(x1)).
template <typename S>
Tensor<S> encoder_layer(const Tensor<S>& x, const EncoderLayerWeights<S>& w, Index heads,
                        AttentionKind kind) {
  Tensor<S> x1 = apply_norm(add(x, multi_head_attention(x, x, w.attn, heads, kind)), w.norm1);
  return apply_norm(add(x1, apply_ffn(x1, w.ffn)), w.norm2);
}

template <typename S>
struct DecoderLayerWeights {
  MhaWeights<S> self_attn, cross_attn;
  FfnWeights<S> ffn;
  LayerNormWeights<S> norm1, norm2, norm3;

  static DecoderLayerWeights create(ParameterStore<S>& store, const std::string& prefix,
                                    const DftConfig& cfg, Rng& rng) {
    DecoderLayerWeights w;
    w.self_attn = MhaWeights<S>::create(store, prefix + ".self", cfg.width, rng);
    w.cross_attn = MhaWeights<S>::create(store, prefix + ".cross", cfg.width, rng);
    w.ffn = FfnWeights<S>::create(store, prefix + ".ffn", cfg.width, cfg.ffn_dim(), rng);
    w.norm1 = LayerNormWeights<S>::create(store, prefix + ".norm1", cfg.width);
    w.norm2 = LayerNormWeights<S>::create(store, prefix + ".norm2", cfg.width);
    w.norm3 = LayerNormWeights<S>::create(store, prefix + ".norm3", cfg.width);
    return w;
  }
};

/// Self-attention over the queries, cross-attention against the encoder
/// context, then the FFN; residual + norm after each sub-block. The decoder
/// self-attention uses the linear kernel, cross-attention the scaled-dot
/// kernel.
template <typename S>
Tensor<S> decoder_layer(const Tensor<S>& queries, const Tensor<S>& context,
                        const DecoderLayerWeights<S>& w, Index heads,
                        AttentionKind self_kind = AttentionKind::Linear,
                        AttentionKind cross_kind = AttentionKind::Softmax) {
  Tensor<S> q1 = apply_norm(
      add(queries, multi_head_attention(queries, queries, w.self_attn, heads, self_kind)),
      w.norm1);
  Tensor<S> q2 = apply_norm(
      add(q1, multi_head_attention(q1, context, w.cross_attn, heads, cross_kind)), w.norm2);
  return apply_norm(add(q2, apply_ffn(q2, w.ffn)), w.norm3);
}

/// [C,H,W] -> [1, H*W, C] (row-major pixel order). Round-trips bit-wise with
/// unflatten_seq.
template <typename S>
Tensor<S> flatten_map(const Tensor<S>& x) {
  const Index c = x.extent(0), n = x.extent(1) * x.extent(2);
  return reshape(transpose_last2(reshape(x, {c, n})), {Index(1), n, c});
}

template <typename S>
Tensor<S> unflatten_seq(const Tensor<S>& x, Index h, Index w) {
  const Index n = x.extent(1), c = x.extent(2);
  if (n != h * w)
    fail(Error::Kind::Dimension, "unflatten_seq: sequence length " + std::to_string(n) +
                                     " is not " + std::to_string(h) + "x" + std::to_string(w));
  return reshape(transpose_last2(reshape(x, {n, c})), {c, h, w});
}

template <typename S>
struct DpmWeights {
  Tensor<S> dw;  // depthwise 3x3 [C,1,3,3]
  Tensor<S> pw;  // pointwise 1x1 [C,C,1,1]

  static DpmWeights create(ParameterStore<S>& store, const std::string& prefix, Index c,
                           Rng& rng) {
    DpmWeights w;
    w.dw = store.create(prefix + ".dw", {c, 1, 3, 3}, 9, rng);
    w.pw = store.create(prefix + ".pw", {c, c, 1, 1}, c, rng);
    return w;
  }
};

/// Depth Position Mapping: add the expected depth-bin embedding to every
/// pixel, refine with a residual depthwise-separable 3x3 convolution, and
/// flatten to a sequence. With zero conv weights this is exactly F + pos.
template <typename S>
Tensor<S> depth_position_mapping(const Tensor<S>& f, const Tensor<S>& dist,
                                 const Tensor<S>& emb, const DpmWeights<S>& w) {
  if (dist.extent(0) != emb.extent(0))
    fail(Error::Kind::Dimension, "dpm: distribution bins " + std::to_string(dist.extent(0)) +
                                     " do not match embeddings " +
                                     std::to_string(emb.extent(0)));
  const Index c = f.extent(0), h = f.extent(1), wd = f.extent(2);
  const Index d = dist.extent(0);
  const Index n = h * wd;
  Tensor<S> pos = matmul(transpose_last2(reshape(dist, {d, n})), emb);  // [N, C]
  Tensor<S> pos_map = reshape(transpose_last2(pos), {c, h, wd});
  Tensor<S> fp = add(f, pos_map);
  Tensor<S> refined = conv2d(conv2d(fp, w.dw, {.stride = 1, .pad = 1, .dilation = 1, .groups = c}),
                             w.pw, {.stride = 1, .pad = 0, .dilation = 1, .groups = 1});
  return flatten_map(add(refined, fp));
}

}  // namespace auxdepth
