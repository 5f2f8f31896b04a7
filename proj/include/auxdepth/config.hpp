#pragma once

// Run configuration: UTF-8 `key = value` lines with `#` comments, plus
// command-line overrides. Unknown keys are rejected and all validation
// errors are reported at once. Two profiles bundle the defaults: `toy`
// (desk-scale overfit runs) and `kitti-full` (the full-scale settings).

#include <string>
#include <vector>

#include "auxdepth/common.hpp"

namespace auxdepth {

struct RunConfig {
  std::string profile = "toy";
  std::uint64_t seed = 1;
  std::string precision = "f32";  // f32 | f64
  int workers = 1;

  // training
  double lr = 5e-4;
  double lr_min = 1e-5;
  int steps = 2000;
  int batch = 4;
  int checkpoint_every = 500;
  int log_every = 1;
  std::string data_dir;
  std::string out_dir = "out";
  std::string resume;

  // model
  int input_w = 320;
  int input_h = 96;
  int stride = 16;
  int num_classes = 1;
  bool use_adf = true;
  std::string fusion = "dft";  // dft | concat

  // lid
  double lid_d_min = 1.0;
  double lid_d_max = 65.0;
  int lid_bins = 32;
  std::string lid_formula = "standard";  // standard | paper_eq2

  // adf
  int adf_dilation = 4;
  bool adf_enable_prototype_enhancement = true;
  std::string adf_attention = "distribution";  // distribution | similarity

  // dft
  int dft_width = 64;
  int dft_heads = 4;
  int dft_enc_layers = 2;
  int dft_dec_layers = 2;
  std::string dft_encoder_attention = "linear";  // linear | softmax
  std::string dft_query_source = "depth";        // depth | learned

  // head
  std::vector<double> head_scales = {16.0, 32.0, 64.0, 128.0};
  std::vector<double> head_ratios = {0.5, 1.0, 2.0};
  double head_nms_iou = 0.4;
  double head_min_score = 0.75;
  double head_pos_iou = 0.5;
  double head_neg_iou = 0.4;

  // losses
  double loss_alpha = 0.25;
  double loss_gamma = 2.0;
  double loss_beta = 1.0;
  double loss_lambda_reg = 1.0;
  double loss_lambda_depth = 1.0;

  // preprocessing
  int preprocess_crop_top = 0;
  int preprocess_out_w = 320;
  int preprocess_out_h = 96;
  double preprocess_flip_prob = 0.0;
  bool preprocess_jitter = false;

  // synthetic data
  int synth_scenes = 20;
  int synth_min_objects = 2;
  int synth_max_objects = 5;
  double synth_focal = 300.0;
};

/// Profile defaults; `toy` or `kitti-full`.
RunConfig default_config(const std::string& profile);

/// Apply one `key=value` pair. Unknown keys or unparsable values raise a
/// config error.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parse a config file then the `--set` overrides, validating everything and
/// reporting all problems in one error.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

/// Config assembled from overrides only (no file).
RunConfig config_from_overrides(const std::vector<std::string>& overrides);

/// Sorted `key = value` dump of the fully resolved configuration.
std::string resolved_config_text(const RunConfig& cfg);

/// Semantic validation (ranges, enum values); collects every problem.
std::vector<std::string> validate_config(const RunConfig& cfg);

}  // namespace auxdepth
