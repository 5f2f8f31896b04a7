#include "auxdepth/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace auxdepth {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

struct KeyEntry {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

double to_double(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size())
    fail(Error::Kind::Config, "config: key '" + key + "' needs a number, got '" + v + "'");
  return d;
}

int to_int(const std::string& v, const std::string& key) {
  const double d = to_double(v, key);
  return static_cast<int>(d);
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  fail(Error::Kind::Config, "config: key '" + key + "' needs a boolean, got '" + v + "'");
}

std::vector<double> to_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double(item, key));
  }
  if (out.empty()) fail(Error::Kind::Config, "config: key '" + key + "' needs a list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string fmt(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

const std::map<std::string, KeyEntry>& registry() {
  static const std::map<std::string, KeyEntry> reg = [] {
    std::map<std::string, KeyEntry> r;
    auto add_str = [&r](const std::string& key, std::string RunConfig::* field) {
      r[key] = {[field](RunConfig& c, const std::string& v) { c.*field = v; },
                [field](const RunConfig& c) { return c.*field; }};
    };
    auto add_int = [&r](const std::string& key, int RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const std::string& v) { c.*field = to_int(v, key); },
                [field](const RunConfig& c) { return std::to_string(c.*field); }};
    };
    auto add_double = [&r](const std::string& key, double RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const std::string& v) { c.*field = to_double(v, key); },
                [field](const RunConfig& c) { return fmt(c.*field); }};
    };
    auto add_bool = [&r](const std::string& key, bool RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const std::string& v) { c.*field = to_bool(v, key); },
                [field](const RunConfig& c) { return c.*field ? "true" : "false"; }};
    };
    auto add_list = [&r](const std::string& key, std::vector<double> RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const std::string& v) { c.*field = to_list(v, key); },
                [field](const RunConfig& c) { return fmt(c.*field); }};
    };

    r["profile"] = {[](RunConfig& c, const std::string& v) {
                      RunConfig fresh = default_config(v);
                      fresh.seed = c.seed;  // profile resets everything else
                      c = fresh;
                    },
                    [](const RunConfig& c) { return c.profile; }};
    r["seed"] = {[](RunConfig& c, const std::string& v) {
                   c.seed = static_cast<std::uint64_t>(std::stoull(v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    add_str("precision", &RunConfig::precision);
    add_int("workers", &RunConfig::workers);

    add_double("train.lr", &RunConfig::lr);
    add_double("train.lr_min", &RunConfig::lr_min);
    add_int("train.steps", &RunConfig::steps);
    add_int("train.batch", &RunConfig::batch);
    add_int("train.checkpoint_every", &RunConfig::checkpoint_every);
    add_int("train.log_every", &RunConfig::log_every);
    add_str("train.data_dir", &RunConfig::data_dir);
    add_str("train.out_dir", &RunConfig::out_dir);
    add_str("train.resume", &RunConfig::resume);

    add_int("model.input_w", &RunConfig::input_w);
    add_int("model.input_h", &RunConfig::input_h);
    add_int("model.stride", &RunConfig::stride);
    add_int("model.num_classes", &RunConfig::num_classes);
    add_bool("model.use_adf", &RunConfig::use_adf);
    add_str("model.fusion", &RunConfig::fusion);

    add_double("lid.d_min", &RunConfig::lid_d_min);
    add_double("lid.d_max", &RunConfig::lid_d_max);
    add_int("lid.bins", &RunConfig::lid_bins);
    add_str("lid.formula", &RunConfig::lid_formula);

    add_int("adf.dilation", &RunConfig::adf_dilation);
    add_bool("adf.enable_prototype_enhancement",
             &RunConfig::adf_enable_prototype_enhancement);
    add_str("adf.attention", &RunConfig::adf_attention);

    add_int("dft.width", &RunConfig::dft_width);
    add_int("dft.heads", &RunConfig::dft_heads);
    add_int("dft.enc_layers", &RunConfig::dft_enc_layers);
    add_int("dft.dec_layers", &RunConfig::dft_dec_layers);
    add_str("dft.encoder_attention", &RunConfig::dft_encoder_attention);
    add_str("dft.query_source", &RunConfig::dft_query_source);

    add_list("head.scales", &RunConfig::head_scales);
    add_list("head.ratios", &RunConfig::head_ratios);
    add_double("head.nms_iou", &RunConfig::head_nms_iou);
    add_double("head.min_score", &RunConfig::head_min_score);
    add_double("head.pos_iou", &RunConfig::head_pos_iou);
    add_double("head.neg_iou", &RunConfig::head_neg_iou);

    add_double("loss.alpha", &RunConfig::loss_alpha);
    add_double("loss.gamma", &RunConfig::loss_gamma);
    add_double("loss.beta", &RunConfig::loss_beta);
    add_double("loss.lambda_reg", &RunConfig::loss_lambda_reg);
    add_double("loss.lambda_depth", &RunConfig::loss_lambda_depth);

    add_int("preprocess.crop_top", &RunConfig::preprocess_crop_top);
    add_int("preprocess.out_w", &RunConfig::preprocess_out_w);
    add_int("preprocess.out_h", &RunConfig::preprocess_out_h);
    add_double("preprocess.flip_prob", &RunConfig::preprocess_flip_prob);
    add_bool("preprocess.jitter", &RunConfig::preprocess_jitter);

    add_int("synth.scenes", &RunConfig::synth_scenes);
    add_int("synth.min_objects", &RunConfig::synth_min_objects);
    add_int("synth.max_objects", &RunConfig::synth_max_objects);
    add_double("synth.focal", &RunConfig::synth_focal);
    return r;
  }();
  return reg;
}

}  // namespace

RunConfig default_config(const std::string& profile) {
  if (profile == "toy") {
    RunConfig c;  // struct defaults are the toy profile
    c.profile = "toy";
    return c;
  }
  if (profile == "kitti-full") {
    RunConfig c;
    c.profile = "kitti-full";
    // full-scale settings: 1280x288 input, crop 100, flip 0.5, jitter on,
    // batch 16, Adam 1e-4 with cosine floor 5e-6, 120 epochs at 7481/16
    c.input_w = 1280;
    c.input_h = 288;
    c.lid_bins = 64;
    c.head_scales = {32.0, 64.0, 128.0};
    c.head_ratios = {0.5, 1.0, 2.0};
    c.lr = 1e-4;
    c.lr_min = 5e-6;
    c.batch = 16;
    c.steps = 56160;
    c.preprocess_crop_top = 100;
    c.preprocess_out_w = 1280;
    c.preprocess_out_h = 288;
    c.preprocess_flip_prob = 0.5;
    c.preprocess_jitter = true;
    return c;
  }
  fail(Error::Kind::Config, "unknown profile '" + profile + "' (toy | kitti-full)");
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& reg = registry();
  auto it = reg.find(key);
  if (it == reg.end()) fail(Error::Kind::Config, "config: unknown key '" + key + "'");
  it->second.set(cfg, value);
}

namespace {

void apply_kv_line(RunConfig& cfg, const std::string& line, int number,
                   std::vector<std::string>& errors) {
  std::string body = line;
  const auto hash = body.find('#');
  if (hash != std::string::npos) body = body.substr(0, hash);
  body = trim(body);
  if (body.empty()) return;
  const auto eq = body.find('=');
  if (eq == std::string::npos) {
    errors.push_back("line " + std::to_string(number) + ": expected key = value");
    return;
  }
  const std::string key = trim(body.substr(0, eq));
  const std::string value = trim(body.substr(eq + 1));
  try {
    apply_override(cfg, key, value);
  } catch (const Error& e) {
    errors.push_back(e.what());
  }
}

RunConfig finish(RunConfig cfg, const std::vector<std::string>& overrides,
                 std::vector<std::string> errors) {
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) {
      errors.push_back("override '" + ov + "': expected key=value");
      continue;
    }
    try {
      apply_override(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    } catch (const Error& e) {
      errors.push_back(e.what());
    }
  }
  for (const auto& msg : validate_config(cfg)) errors.push_back(msg);
  if (!errors.empty()) {
    std::string all = "configuration invalid:";
    for (const auto& e : errors) all += "\n  - " + e;
    fail(Error::Kind::Config, all);
  }
  return cfg;
}

}  // namespace

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) fail(Error::Kind::Config, "cannot open config file " + path);
  RunConfig cfg;
  std::vector<std::string> errors;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) apply_kv_line(cfg, line, ++number, errors);
  return finish(std::move(cfg), overrides, std::move(errors));
}

RunConfig config_from_overrides(const std::vector<std::string>& overrides) {
  return finish(RunConfig{}, overrides, {});
}

std::string resolved_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, entry] : registry()) out += key + " = " + entry.get(cfg) + "\n";
  return out;
}

std::vector<std::string> validate_config(const RunConfig& cfg) {
  std::vector<std::string> errors;
  auto check = [&errors](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  check(cfg.precision == "f32" || cfg.precision == "f64",
        "precision must be f32 or f64, got '" + cfg.precision + "'");
  check(cfg.workers >= 1, "workers must be >= 1");
  check(cfg.lr > 0.0 && cfg.lr_min > 0.0 && cfg.lr_min <= cfg.lr,
        "need 0 < train.lr_min <= train.lr");
  check(cfg.steps >= 1 && cfg.batch >= 1, "train.steps and train.batch must be >= 1");
  check(cfg.input_w % cfg.stride == 0 && cfg.input_h % cfg.stride == 0,
        "model input " + std::to_string(cfg.input_w) + "x" + std::to_string(cfg.input_h) +
            " must be divisible by stride " + std::to_string(cfg.stride));
  check(cfg.num_classes >= 1, "model.num_classes must be >= 1");
  check(cfg.fusion == "dft" || cfg.fusion == "concat",
        "model.fusion must be dft or concat, got '" + cfg.fusion + "'");
  check(cfg.lid_d_min > 0.0 && cfg.lid_d_min < cfg.lid_d_max,
        "lid needs 0 < d_min < d_max");
  check(cfg.lid_bins >= 2, "lid.bins must be >= 2");
  check(cfg.lid_formula == "standard" || cfg.lid_formula == "paper_eq2",
        "lid.formula must be standard or paper_eq2");
  const int dil = cfg.adf_dilation;
  check(dil == 1 || dil == 2 || dil == 4 || dil == 8 || dil == 16,
        "adf.dilation must be one of 1,2,4,8,16");
  check(cfg.adf_attention == "distribution" || cfg.adf_attention == "similarity",
        "adf.attention must be distribution or similarity");
  check(cfg.dft_width >= 1 && cfg.dft_heads >= 1 && cfg.dft_width % cfg.dft_heads == 0,
        "dft.width must be divisible by dft.heads");
  check(cfg.dft_enc_layers >= 0 && cfg.dft_dec_layers >= 0,
        "dft layer counts must be >= 0");
  check(cfg.dft_encoder_attention == "linear" || cfg.dft_encoder_attention == "softmax",
        "dft.encoder_attention must be linear or softmax");
  check(cfg.dft_query_source == "depth" || cfg.dft_query_source == "learned",
        "dft.query_source must be depth or learned");
  check(!cfg.head_scales.empty(), "head.scales must be non-empty");
  check(!cfg.head_ratios.empty(), "head.ratios must be non-empty");
  check(cfg.head_nms_iou > 0.0 && cfg.head_nms_iou < 1.0, "head.nms_iou must be in (0,1)");
  check(cfg.head_min_score >= 0.0 && cfg.head_min_score <= 1.0,
        "head.min_score must be in [0,1]");
  check(cfg.head_neg_iou <= cfg.head_pos_iou, "head.neg_iou must not exceed head.pos_iou");
  check(cfg.loss_alpha >= 0.0 && cfg.loss_gamma >= 0.0 && cfg.loss_beta >= 0.0 &&
            cfg.loss_lambda_reg >= 0.0 && cfg.loss_lambda_depth >= 0.0,
        "loss weights must be nonnegative");
  check(cfg.preprocess_crop_top >= 0, "preprocess.crop_top must be >= 0");
  check(cfg.preprocess_out_w > 0 && cfg.preprocess_out_h > 0,
        "preprocess output extents must be positive");
  check(cfg.preprocess_flip_prob >= 0.0 && cfg.preprocess_flip_prob <= 1.0,
        "preprocess.flip_prob must be in [0,1]");
  check(cfg.synth_scenes >= 0 && cfg.synth_min_objects >= 0 &&
            cfg.synth_max_objects >= cfg.synth_min_objects,
        "synth scene/object counts invalid");
  return errors;
}

}  // namespace auxdepth
