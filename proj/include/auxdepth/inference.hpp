#pragma once

// Inference: model outputs -> decoded, score-filtered, NMS-suppressed
// detections, and their KITTI prediction-file form.

#include <vector>

#include "auxdepth/head.hpp"
#include "auxdepth/kitti.hpp"
#include "auxdepth/model.hpp"

namespace auxdepth {

/// Lift decoded geometry to a camera-frame box through the calibration.
inline Box3D lift_to_camera(const BoxGeom& g, const kitti::Calibration& calib) {
  const auto [x, y_center] = calib.backproject(g.u, g.v, g.z);
  Box3D b;
  b.x = x;
  b.y = y_center + 0.5 * g.h;  // KITTI boxes hang below their y-location
  b.z = g.z;
  b.h = g.h;
  b.w = g.w;
  b.l = g.l;
  b.ry = g.ry;
  return b;
}

/// Score filter first (cheaper, order-independent for greedy NMS), then NMS.
template <typename S>
std::vector<Detection> detect(const Model<S>& model, const Tensor<S>& image,
                              const std::vector<Anchor>& anchors,
                              const kitti::Calibration& calib) {
  const ModelOutputs<S> out = model.forward(image);
  const Tensor<S> scores = sigmoid(model.cls_rows(out));
  const Tensor<S> deltas = model.box_rows(out);
  const Index k = model.config().num_classes;
  std::vector<Detection> cands;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (Index c = 0; c < k; ++c) {
      const double score = static_cast<double>(scores[static_cast<Index>(a) * k + c]);
      if (score < model.config().head.min_score) continue;
      double d[kRegressionDims];
      for (int r = 0; r < kRegressionDims; ++r)
        d[r] = static_cast<double>(deltas[static_cast<Index>(a) * kRegressionDims + r]);
      const BoxGeom geom = decode_box(anchors[a], d, static_cast<Index>(a));
      Detection det;
      det.class_id = static_cast<int>(c);
      det.score = score;
      det.box2d = geom.box2d;
      det.box3d = lift_to_camera(geom, calib);
      cands.push_back(det);
    }
  }
  return nms(cands, model.config().head.nms_iou);
}

/// Prediction-file row for a detection; the 2D box is clipped to the image.
inline kitti::Label detection_to_label(const Detection& det, Index image_w, Index image_h,
                                       const std::string& class_name = "Car") {
  kitti::Label lb;
  lb.type = class_name;
  lb.truncated = 0.0;
  lb.occluded = 0;
  lb.x1 = std::clamp(det.box2d.x1, 0.0, static_cast<double>(image_w));
  lb.y1 = std::clamp(det.box2d.y1, 0.0, static_cast<double>(image_h));
  lb.x2 = std::clamp(det.box2d.x2, 0.0, static_cast<double>(image_w));
  lb.y2 = std::clamp(det.box2d.y2, 0.0, static_cast<double>(image_h));
  lb.h = det.box3d.h;
  lb.w = det.box3d.w;
  lb.l = det.box3d.l;
  lb.x = det.box3d.x;
  lb.y = det.box3d.y;
  lb.z = det.box3d.z;
  lb.ry = det.box3d.ry;
  lb.alpha = wrap_angle(det.box3d.ry - std::atan2(det.box3d.x, det.box3d.z));
  lb.has_score = true;
  lb.score = det.score;
  return lb;
}

}  // namespace auxdepth
