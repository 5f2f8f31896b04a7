#pragma once

// KITTI label and calibration parsing, difficulty classification, and the
// image preprocessing pipeline (crop, flip, resize, normalize, photometric
// jitter). Image decoding stays behind read_ppm/write_ppm so the core never
// depends on a codec.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "auxdepth/tensor.hpp"

namespace auxdepth::kitti {

struct Label {
  std::string type;
  double truncated = 0.0;
  int occluded = 0;
  double alpha = 0.0;
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  double h = 0.0, w = 0.0, l = 0.0;  // dims order in the file: h w l
  double x = 0.0, y = 0.0, z = 0.0;  // bottom-center location, camera frame
  double ry = 0.0;
  bool has_score = false;
  double score = 0.0;
};

/// Parse one whitespace-separated label line: 15 fields for ground truth,
/// 16 with a trailing score for predictions.
Label parse_label_line(const std::string& line, int line_number = 0);

/// Canonical %.2f formatting per the KITTI convention; occluded stays an
/// integer.
std::string serialize_label(const Label& label);

std::vector<Label> read_label_file(const std::string& path);
void write_label_file(const std::string& path, const std::vector<Label>& labels);

struct Calibration {
  std::array<double, 12> p2 = {700.0, 0.0, 640.0, 0.0, 0.0, 700.0,
                               180.0, 0.0, 0.0,   0.0, 1.0, 0.0};
  double fx() const { return p2[0]; }
  double cx() const { return p2[2]; }
  double tx() const { return p2[3]; }
  double fy() const { return p2[5]; }
  double cy() const { return p2[6]; }
  double ty() const { return p2[7]; }
  double tz() const { return p2[11]; }

  /// Project a camera-frame point to pixel coordinates.
  std::pair<double, double> project(double x, double y, double z) const {
    const double wdiv = z + tz();
    return {(fx() * x + cx() * z + tx()) / wdiv, (fy() * y + cy() * z + ty()) / wdiv};
  }

  /// Invert the projection at a known center depth z.
  std::pair<double, double> backproject(double u, double v, double z) const {
    const double wdiv = z + tz();
    return {(u * wdiv - cx() * z - tx()) / fx(), (v * wdiv - cy() * z - ty()) / fy()};
  }

  /// Rescale intrinsics for an image resize by (sx, sy).
  Calibration scaled(double sx, double sy) const {
    Calibration c = *this;
    for (int i = 0; i < 4; ++i) c.p2[static_cast<std::size_t>(i)] *= sx;
    for (int i = 4; i < 8; ++i) c.p2[static_cast<std::size_t>(i)] *= sy;
    return c;
  }
};

Calibration parse_calib_text(const std::string& content);
Calibration read_calib_file(const std::string& path);
void write_calib_file(const std::string& path, const Calibration& calib);

enum class Difficulty { Easy = 0, Moderate = 1, Hard = 2, Ignored = 3 };

/// KITTI development-kit thresholds: box height 40/25/25 px, occlusion
/// 0/1/2, truncation 0.15/0.30/0.50.
Difficulty classify_difficulty(const Label& label);

/// Horizontal flip of labels for an image of the given width.
std::vector<Label> flip_labels(const std::vector<Label>& labels, double image_width);

// --- image pipeline -------------------------------------------------------

struct PreprocessConfig {
  Index crop_top = 100;
  Index out_w = 1280;
  Index out_h = 288;
  std::array<double, 3> mean = {0.485, 0.456, 0.406};
  std::array<double, 3> stdev = {0.229, 0.224, 0.225};
  double flip_prob = 0.5;
  bool jitter = true;
  double jitter_brightness = 0.2;
  double jitter_contrast = 0.2;
  double jitter_saturation = 0.2;
  double jitter_hue = 0.05;
};

enum class PreprocessMode { Train, Test };

struct AppliedTransforms {
  bool flipped = false;
  Index crop_top = 0;
  double scale_x = 1.0, scale_y = 1.0;  // resize ratios after the crop
};

template <typename S>
Tensor<S> flip_image(const Tensor<S>& img) {
  const Index c = img.extent(0), h = img.extent(1), w = img.extent(2);
  Tensor<S> out = Tensor<S>::zeros(img.shape());
  const S* src = img.data();
  S* dst = out.data();
  for (Index ch = 0; ch < c; ++ch)
    for (Index r = 0; r < h; ++r)
      for (Index col = 0; col < w; ++col)
        dst[(ch * h + r) * w + col] = src[(ch * h + r) * w + (w - 1 - col)];
  return out;
}

template <typename S>
Tensor<S> bilinear_resize(const Tensor<S>& img, Index out_h, Index out_w) {
  const Index c = img.extent(0), h = img.extent(1), w = img.extent(2);
  Tensor<S> out = Tensor<S>::zeros({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  const S* src = img.data();
  S* dst = out.data();
  for (Index r = 0; r < out_h; ++r) {
    double fy = (static_cast<double>(r) + 0.5) * sy - 0.5;
    fy = fy < 0.0 ? 0.0 : fy;
    Index y0 = static_cast<Index>(fy);
    y0 = y0 > h - 1 ? h - 1 : y0;
    const Index y1 = y0 + 1 > h - 1 ? h - 1 : y0 + 1;
    const double wy = fy - static_cast<double>(y0);
    for (Index col = 0; col < out_w; ++col) {
      double fx = (static_cast<double>(col) + 0.5) * sx - 0.5;
      fx = fx < 0.0 ? 0.0 : fx;
      Index x0 = static_cast<Index>(fx);
      x0 = x0 > w - 1 ? w - 1 : x0;
      const Index x1 = x0 + 1 > w - 1 ? w - 1 : x0 + 1;
      const double wx = fx - static_cast<double>(x0);
      for (Index ch = 0; ch < c; ++ch) {
        const double a = static_cast<double>(src[(ch * h + y0) * w + x0]);
        const double b = static_cast<double>(src[(ch * h + y0) * w + x1]);
        const double d = static_cast<double>(src[(ch * h + y1) * w + x0]);
        const double e = static_cast<double>(src[(ch * h + y1) * w + x1]);
        const double top = a + (b - a) * wx;
        const double bot = d + (e - d) * wx;
        dst[(ch * out_h + r) * out_w + col] = static_cast<S>(top + (bot - top) * wy);
      }
    }
  }
  return out;
}

namespace detail {

template <typename S>
void photometric_jitter(Tensor<S>& img, Rng& rng, const PreprocessConfig& cfg) {
  const Index h = img.extent(1), w = img.extent(2);
  const Index hw = h * w;
  const double brightness = 1.0 + rng.uniform(-cfg.jitter_brightness, cfg.jitter_brightness);
  const double contrast = 1.0 + rng.uniform(-cfg.jitter_contrast, cfg.jitter_contrast);
  const double saturation = 1.0 + rng.uniform(-cfg.jitter_saturation, cfg.jitter_saturation);
  const double hue = rng.uniform(-cfg.jitter_hue, cfg.jitter_hue) * 2.0 * 3.14159265358979;
  S* v = img.data();
  double mean = 0.0;
  for (Index i = 0; i < img.numel(); ++i) mean += static_cast<double>(v[i]);
  mean /= static_cast<double>(img.numel());
  // hue: rotate chroma about the gray axis
  const double ch = std::cos(hue), sh = std::sin(hue);
  const double third = 1.0 / 3.0, rt3 = std::sqrt(1.0 / 3.0);
  const double m00 = ch + (1.0 - ch) * third, m01 = third * (1.0 - ch) - rt3 * sh,
               m02 = third * (1.0 - ch) + rt3 * sh;
  for (Index i = 0; i < hw; ++i) {
    double r = static_cast<double>(v[i]);
    double g = static_cast<double>(v[hw + i]);
    double b = static_cast<double>(v[2 * hw + i]);
    const double nr = m00 * r + m01 * g + m02 * b;
    const double ng = m02 * r + m00 * g + m01 * b;
    const double nb = m01 * r + m02 * g + m00 * b;
    const double gray = 0.299 * nr + 0.587 * ng + 0.114 * nb;
    r = gray + (nr - gray) * saturation;
    g = gray + (ng - gray) * saturation;
    b = gray + (nb - gray) * saturation;
    r = (r - mean) * contrast + mean;
    g = (g - mean) * contrast + mean;
    b = (b - mean) * contrast + mean;
    r *= brightness;
    g *= brightness;
    b *= brightness;
    v[i] = static_cast<S>(r < 0.0 ? 0.0 : (r > 1.0 ? 1.0 : r));
    v[hw + i] = static_cast<S>(g < 0.0 ? 0.0 : (g > 1.0 ? 1.0 : g));
    v[2 * hw + i] = static_cast<S>(b < 0.0 ? 0.0 : (b > 1.0 ? 1.0 : b));
  }
}

}  // namespace detail

/// The image pipeline. Train mode: photometric jitter, crop the top rows,
/// flip with probability flip_prob, bilinear resize, per-channel normalize.
/// Test mode applies only crop, resize, and normalize and is deterministic.
template <typename S>
std::pair<Tensor<S>, AppliedTransforms> preprocess(const Tensor<S>& image,
                                                   PreprocessMode mode, Rng& rng,
                                                   const PreprocessConfig& cfg = {}) {
  if (image.rank() != 3 || image.extent(0) != 3)
    fail(Error::Kind::Dimension,
         "preprocess: expected image [3,H,W], got " + shape_str(image.shape()));
  const Index h = image.extent(1), w = image.extent(2);
  if (h <= cfg.crop_top)
    fail(Error::Kind::Geometry, "preprocess: image height " + std::to_string(h) +
                                    " too short to crop " + std::to_string(cfg.crop_top) +
                                    " rows");
  AppliedTransforms applied;
  applied.crop_top = cfg.crop_top;

  Tensor<S> img = Tensor<S>::from(image.shape(), image.values());
  if (mode == PreprocessMode::Train && cfg.jitter) detail::photometric_jitter(img, rng, cfg);

  if (cfg.crop_top > 0) {
    const Index ch2 = h - cfg.crop_top;
    Tensor<S> cropped = Tensor<S>::zeros({3, ch2, w});
    for (Index ch = 0; ch < 3; ++ch)
      std::copy(img.data() + (ch * h + cfg.crop_top) * w, img.data() + (ch + 1) * h * w,
                cropped.data() + ch * ch2 * w);
    img = cropped;
  }

  if (mode == PreprocessMode::Train && rng.uniform() < cfg.flip_prob) {
    img = flip_image(img);
    applied.flipped = true;
  }

  applied.scale_x = static_cast<double>(cfg.out_w) / static_cast<double>(img.extent(2));
  applied.scale_y = static_cast<double>(cfg.out_h) / static_cast<double>(img.extent(1));
  if (img.extent(1) != cfg.out_h || img.extent(2) != cfg.out_w)
    img = bilinear_resize(img, cfg.out_h, cfg.out_w);

  S* v = img.data();
  const Index hw = cfg.out_h * cfg.out_w;
  for (Index ch = 0; ch < 3; ++ch) {
    const S m = static_cast<S>(cfg.mean[static_cast<std::size_t>(ch)]);
    const S inv = static_cast<S>(1.0 / cfg.stdev[static_cast<std::size_t>(ch)]);
    for (Index i = 0; i < hw; ++i) v[ch * hw + i] = (v[ch * hw + i] - m) * inv;
  }
  return {img, applied};
}

// --- ppm image files -------------------------------------------------------

/// 8-bit binary PPM (P6). Values quantize from [0,1].
void write_ppm(const std::string& path, const std::vector<double>& rgb, Index h, Index w);

/// Returns [3,H,W] values in [0,1].
std::vector<double> read_ppm(const std::string& path, Index& h, Index& w);

/// Raw little-endian float32 depth map with a 3-int32 header (height, width,
/// channels=1). Background pixels hold +inf.
void write_depth(const std::string& path, const std::vector<double>& depth, Index h, Index w);
std::vector<double> read_depth(const std::string& path, Index& h, Index& w);

}  // namespace auxdepth::kitti
