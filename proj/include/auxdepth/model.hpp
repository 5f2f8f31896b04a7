#pragma once

// Full-model assembly: toy convolutional backbone, context branch, ADF depth
// branch, DPM, DFT fusion, and the anchor-based detection head.

#include <string>
#include <vector>

#include "auxdepth/adf.hpp"
#include "auxdepth/config.hpp"
#include "auxdepth/dft.hpp"
#include "auxdepth/head.hpp"
#include "auxdepth/lid.hpp"

namespace auxdepth {

struct ModelConfig {
  Index input_w = 320;
  Index input_h = 96;
  std::vector<Index> backbone_channels = {16, 32, 48, 64};
  Index num_classes = 1;
  lid::Config lid{1.0, 65.0, 32, lid::Formula::Standard};
  AdfConfig adf;
  DftConfig dft;
  HeadConfig head;
  bool use_adf = true;
  enum class Fusion { Dft, Concat } fusion = Fusion::Dft;

  Index stride() const { return Index(1) << backbone_channels.size(); }
  Index feat_w() const { return input_w / stride(); }
  Index feat_h() const { return input_h / stride(); }
  Index seq_len() const { return feat_w() * feat_h(); }
  Index anchors_per_loc() const {
    return static_cast<Index>(head.scales.size() * head.ratios.size());
  }
  Index num_anchors() const { return seq_len() * anchors_per_loc(); }

  static ModelConfig from_run_config(const RunConfig& rc);
  void validate() const;
};

inline ModelConfig ModelConfig::from_run_config(const RunConfig& rc) {
  ModelConfig cfg;
  cfg.input_w = rc.input_w;
  cfg.input_h = rc.input_h;
  cfg.num_classes = rc.num_classes;
  cfg.lid = {rc.lid_d_min, rc.lid_d_max, rc.lid_bins,
             rc.lid_formula == "paper_eq2" ? lid::Formula::PaperEq2 : lid::Formula::Standard};
  cfg.adf.channels = rc.dft_width;
  cfg.adf.depth_bins = rc.lid_bins;
  cfg.adf.dilation = rc.adf_dilation;
  cfg.adf.enable_prototype_enhancement = rc.adf_enable_prototype_enhancement;
  cfg.adf.attention = rc.adf_attention == "similarity" ? AdfAttention::Similarity
                                                       : AdfAttention::Distribution;
  cfg.dft.width = rc.dft_width;
  cfg.dft.heads = rc.dft_heads;
  cfg.dft.enc_layers = rc.dft_enc_layers;
  cfg.dft.dec_layers = rc.dft_dec_layers;
  cfg.dft.encoder_attention =
      rc.dft_encoder_attention == "softmax" ? AttentionKind::Softmax : AttentionKind::Linear;
  cfg.dft.query_source = rc.dft_query_source == "learned" ? DftConfig::QuerySource::Learned
                                                          : DftConfig::QuerySource::Depth;
  cfg.head.scales = rc.head_scales;
  cfg.head.ratios = rc.head_ratios;
  cfg.head.nms_iou = rc.head_nms_iou;
  cfg.head.min_score = rc.head_min_score;
  cfg.head.pos_iou = rc.head_pos_iou;
  cfg.head.neg_iou = rc.head_neg_iou;
  cfg.use_adf = rc.use_adf;
  cfg.fusion = rc.fusion == "concat" ? Fusion::Concat : Fusion::Dft;
  if (rc.stride != static_cast<int>(cfg.stride()))
    fail(Error::Kind::Config, "model: configured stride " + std::to_string(rc.stride) +
                                  " does not match the backbone stride " +
                                  std::to_string(cfg.stride()));
  cfg.validate();
  return cfg;
}

inline void ModelConfig::validate() const {
  if (backbone_channels.empty())
    fail(Error::Kind::Config, "model: backbone channel schedule is empty");
  if (backbone_channels.back() != dft.width)
    fail(Error::Kind::Config, "model: backbone output width " +
                                  std::to_string(backbone_channels.back()) +
                                  " must equal dft.width " + std::to_string(dft.width));
  if (input_w % stride() != 0 || input_h % stride() != 0)
    fail(Error::Kind::Config, "model: input " + std::to_string(input_w) + "x" +
                                  std::to_string(input_h) + " not divisible by stride " +
                                  std::to_string(stride()));
  if (dft.width % dft.heads != 0)
    fail(Error::Kind::Config, "model: dft.width not divisible by heads");
  lid::validate(lid);
}

template <typename S>
struct ModelOutputs {
  Tensor<S> cls_logits;    // [A*K, Hf, Wf]
  Tensor<S> box_deltas;    // [A*R, Hf, Wf]
  Tensor<S> depth_logits;  // [D, Hf, Wf]; undefined when the ADF branch is off
};

template <typename S>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const Index c = cfg_.dft.width;
    Index in_ch = 3;
    for (std::size_t i = 0; i < cfg_.backbone_channels.size(); ++i) {
      const Index out_ch = cfg_.backbone_channels[i];
      const std::string prefix = "backbone.stage" + std::to_string(i);
      bb_w_.push_back(params_.create(prefix + ".w", {out_ch, in_ch, 3, 3}, in_ch * 9, rng));
      bb_b_.push_back(params_.create_zeros(prefix + ".b", {out_ch}));
      in_ch = out_ch;
    }
    ctx_w_ = params_.create("context.w", {c, c, 3, 3}, c * 9, rng);
    ctx_b_ = params_.create_zeros("context.b", {c});
    if (cfg_.use_adf) adf_ = AdfWeights<S>::create(params_, "adf", cfg_.adf, rng);
    if (cfg_.fusion == ModelConfig::Fusion::Dft) {
      for (Index i = 0; i < cfg_.dft.enc_layers; ++i)
        enc_.push_back(EncoderLayerWeights<S>::create(
            params_, "dft.enc" + std::to_string(i), cfg_.dft, rng));
      if (cfg_.use_adf && cfg_.dft.query_source == DftConfig::QuerySource::Depth) {
        bin_emb_ = params_.create("dft.bin_embeddings", {cfg_.adf.depth_bins, c}, c, rng);
        dpm_ = DpmWeights<S>::create(params_, "dft.dpm", c, rng);
      }
      if (cfg_.dft.query_source == DftConfig::QuerySource::Learned)
        learned_queries_ = params_.create("dft.queries", {cfg_.seq_len(), c}, c, rng);
      for (Index i = 0; i < cfg_.dft.dec_layers; ++i)
        dec_.push_back(DecoderLayerWeights<S>::create(
            params_, "dft.dec" + std::to_string(i), cfg_.dft, rng));
    } else {
      concat_w_ = params_.create("fusion.concat.w", {c, 2 * c, 1, 1}, 2 * c, rng);
      concat_b_ = params_.create_zeros("fusion.concat.b", {c});
    }
    head_w_ = params_.create("head.conv.w", {c, c, 3, 3}, c * 9, rng);
    head_b_ = params_.create_zeros("head.conv.b", {c});
    const Index a = cfg_.anchors_per_loc();
    cls_w_ = params_.create("head.cls.w", {a * cfg_.num_classes, c, 1, 1}, c, rng);
    // focal-style prior: initial scores near 0.01 keep early negatives easy
    cls_b_ = params_.create_const("head.cls.b", {a * cfg_.num_classes},
                                  static_cast<S>(-std::log(99.0)));
    box_w_ = params_.create("head.box.w", {a * kRegressionDims, c, 1, 1}, c, rng);
    box_b_ = params_.create_zeros("head.box.b", {a * kRegressionDims});
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<S>& params() { return params_; }
  const ParameterStore<S>& params() const { return params_; }

  /// Stride-2 conv stages down to feature stride 2^len(channels).
  Tensor<S> backbone_forward(const Tensor<S>& image) const {
    if (image.rank() != 3 || image.extent(0) != 3 ||
        image.extent(1) % cfg_.stride() != 0 || image.extent(2) % cfg_.stride() != 0)
      fail(Error::Kind::Config, "backbone: image " + shape_str(image.shape()) +
                                    " must be [3,H,W] with H, W divisible by " +
                                    std::to_string(cfg_.stride()));
    Tensor<S> x = image;
    for (std::size_t i = 0; i < bb_w_.size(); ++i)
      x = relu(add_channel_bias(
          conv2d(x, bb_w_[i], {.stride = 2, .pad = 1, .dilation = 1, .groups = 1}),
          bb_b_[i]));
    return x;
  }

  ModelOutputs<S> forward(const Tensor<S>& image) const {
    if (image.rank() != 3 || image.extent(0) != 3 || image.extent(1) != cfg_.input_h ||
        image.extent(2) != cfg_.input_w)
      fail(Error::Kind::Config, "model: expected image [3," + std::to_string(cfg_.input_h) +
                                    "," + std::to_string(cfg_.input_w) + "], got " +
                                    shape_str(image.shape()));
    Tensor<S> x = backbone_forward(image);

    Tensor<S> context = relu(add_channel_bias(
        conv2d(x, ctx_w_, {.stride = 1, .pad = 1, .dilation = 1, .groups = 1}), ctx_b_));

    AdfOutputs<S> adf_out;
    if (cfg_.use_adf) adf_out = adf_forward(x, adf_, cfg_.adf);

    Tensor<S> fused;
    if (cfg_.fusion == ModelConfig::Fusion::Dft) {
      Tensor<S> memory = flatten_map(context);
      for (const auto& layer : enc_)
        memory = encoder_layer(memory, layer, cfg_.dft.heads, cfg_.dft.encoder_attention);
      Tensor<S> queries;
      if (cfg_.dft.query_source == DftConfig::QuerySource::Learned) {
        queries = reshape(learned_queries_, {Index(1), cfg_.seq_len(), cfg_.dft.width});
      } else if (cfg_.use_adf) {
        queries = depth_position_mapping(adf_out.features, adf_out.dist, bin_emb_, dpm_);
      } else {
        queries = flatten_map(context);  // context-only baseline
      }
      for (const auto& layer : dec_)
        queries = decoder_layer(queries, memory, layer, cfg_.dft.heads);
      fused = unflatten_seq(queries, cfg_.feat_h(), cfg_.feat_w());
    } else {
      const Tensor<S>& depth_stream = cfg_.use_adf ? adf_out.features : context;
      fused = relu(add_channel_bias(
          conv2d(concat_channels(context, depth_stream), concat_w_,
                 {.stride = 1, .pad = 0, .dilation = 1, .groups = 1}),
          concat_b_));
    }

    Tensor<S> h = relu(add_channel_bias(
        conv2d(fused, head_w_, {.stride = 1, .pad = 1, .dilation = 1, .groups = 1}),
        head_b_));
    ModelOutputs<S> out;
    out.cls_logits = add_channel_bias(
        conv2d(h, cls_w_, {.stride = 1, .pad = 0, .dilation = 1, .groups = 1}), cls_b_);
    out.box_deltas = add_channel_bias(
        conv2d(h, box_w_, {.stride = 1, .pad = 0, .dilation = 1, .groups = 1}), box_b_);
    if (cfg_.use_adf) out.depth_logits = adf_out.logits;
    return out;
  }

  /// [A*K, Hf, Wf] -> [N_anchors, K] in the (row, col, anchor) order used by
  /// generate_anchors.
  Tensor<S> cls_rows(const ModelOutputs<S>& out) const {
    return head_rows(out.cls_logits, cfg_.num_classes);
  }

  Tensor<S> box_rows(const ModelOutputs<S>& out) const {
    return head_rows(out.box_deltas, Index(kRegressionDims));
  }

 private:
  Tensor<S> head_rows(const Tensor<S>& map, Index per_anchor) const {
    const Index a = cfg_.anchors_per_loc();
    const Index hf = cfg_.feat_h(), wf = cfg_.feat_w();
    Tensor<S> r = reshape(map, {a, per_anchor, hf, wf});
    return reshape(permute(r, {2, 3, 0, 1}), {hf * wf * a, per_anchor});
  }

  ModelConfig cfg_;
  ParameterStore<S> params_;
  std::vector<Tensor<S>> bb_w_, bb_b_;
  Tensor<S> ctx_w_, ctx_b_;
  AdfWeights<S> adf_;
  std::vector<EncoderLayerWeights<S>> enc_;
  std::vector<DecoderLayerWeights<S>> dec_;
  Tensor<S> bin_emb_;
  DpmWeights<S> dpm_;
  Tensor<S> learned_queries_;
  Tensor<S> concat_w_, concat_b_;
  Tensor<S> head_w_, head_b_, cls_w_, cls_b_, box_w_, box_b_;
};

}  // namespace auxdepth
