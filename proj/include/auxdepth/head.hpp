#pragma once

// Anchor generation, anchor-to-ground-truth matching, box encoding and
// decoding, score filtering and NMS.

#include <array>
#include <vector>

#include "auxdepth/geometry.hpp"
#include "auxdepth/lid.hpp"

namespace auxdepth {

struct Box2D {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0.0 && height() > 0.0 ? width() * height() : 0.0; }
};

double iou_2d(const Box2D& a, const Box2D& b);

/// 2D box with attached 3D priors. z0 is the depth prior in meters, assigned
/// from the anchor's image row (lower rows sit nearer the camera).
struct Anchor {
  Box2D box;
  double z0 = 0.0;
  double w0 = 1.6, h0 = 1.6, l0 = 3.9;
  double ry0 = 0.0;
};

struct HeadConfig {
  std::vector<double> scales = {32.0, 64.0, 128.0};
  std::vector<double> ratios = {0.5, 1.0, 2.0};
  double nms_iou = 0.4;
  double min_score = 0.75;
  double pos_iou = 0.5;
  double neg_iou = 0.4;
  double prior_w = 1.6, prior_h = 1.6, prior_l = 3.9;
};

/// Dense anchor grid: per feature-map location, scales x ratios anchors
/// centered at ((col+0.5)*stride, (row+0.5)*stride). Anchor order is
/// (row, col, scale*ratio), matching the head's channel layout.
std::vector<Anchor> generate_anchors(Index feat_h, Index feat_w, Index stride,
                                     const HeadConfig& cfg, const lid::Config& lid_cfg);

struct AnchorMatch {
  enum class Label { Positive, Negative, Ignore };
  Label label = Label::Negative;
  int gt = -1;       // valid for positives
  double iou = 0.0;  // IoU with the matched gt (positives only)
};

/// IoU >= pos_iou -> positive (argmax gt, ties to the lowest gt index),
/// IoU < neg_iou -> negative, otherwise ignore. Each gt's single best
/// anchor (ties to the lowest anchor index) is then forced positive when
/// its IoU is nonzero, so no covered gt goes unmatched.
std::vector<AnchorMatch> match_anchors(const std::vector<Anchor>& anchors,
                                       const std::vector<Box2D>& gts, double pos_iou = 0.5,
                                       double neg_iou = 0.4);

constexpr int kRegressionDims = 11;  // x1 y1 x2 y2 | cu cv z | w h l | ry

/// Detection geometry in image/metric space: 2D box, projected 3D-center
/// pixel (u, v), center depth, metric dims, and yaw. Lifting (u, v, z) to
/// camera coordinates needs the calibration and happens at the IO boundary.
struct BoxGeom {
  Box2D box2d;
  double u = 0.0, v = 0.0;  // projected 3D center, pixels
  double z = 0.0;           // center depth, meters
  double w = 0.0, h = 0.0, l = 0.0;
  double ry = 0.0;
};

/// Deltas such that decode_box(anchor, encode_box(gt, anchor)) == gt.
std::array<double, kRegressionDims> encode_box(const BoxGeom& gt, const Anchor& anchor);

/// Zero deltas reproduce the anchor priors exactly. Non-finite deltas raise
/// a decode error naming the anchor index.
BoxGeom decode_box(const Anchor& anchor, const double* deltas, Index anchor_index);

struct Detection {
  int class_id = 0;
  double score = 0.0;
  Box2D box2d;
  Box3D box3d;
};

/// Greedy NMS by descending score (ties keep the earlier input index);
/// suppresses any remaining detection whose 2D IoU with a kept one exceeds
/// the threshold. Output order is the keep order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh);

/// Order-preserving filter; detections with score strictly below min_score
/// are discarded.
std::vector<Detection> filter_by_score(const std::vector<Detection>& dets, double min_score);

}  // namespace auxdepth
