#pragma once

// Deterministic synthetic scenes: car-like boxes on a ground plane rendered
// through a pinhole camera, with exact projected labels and a dense depth
// map. This is the depth supervision source for overfit runs and the
// fixture generator for evaluator tests.

#include <limits>
#include <string>
#include <vector>

#include "auxdepth/geometry.hpp"
#include "auxdepth/kitti.hpp"

namespace auxdepth::synth {

struct SynthConfig {
  Index width = 320;
  Index height = 96;
  double focal = 300.0;
  double cx = 160.0;
  double cy = 30.0;          // horizon sits above the image center
  double cam_height = 1.0;   // ground plane at y = cam_height (y points down)
  double depth_min = 5.0;
  double depth_max = 50.0;
  double near_depth_frac = 0.5;  // fraction of objects drawn from the near band
  double near_band_max = 14.0;
  double max_bev_iou = 0.1;
  double max_image_iou = 0.3;  // occlusion-free scenes: labels carry occluded = 0
  int max_rejections = 1000;
};

struct Scene {
  std::uint64_t seed = 0;
  std::vector<Box3D> boxes;
  kitti::Calibration calib;
  Index width = 0, height = 0;
};

constexpr double kDepthSentinel = std::numeric_limits<double>::infinity();

/// Sample n non-overlapping (BEV IoU < max_bev_iou) car-like boxes fully
/// inside the camera frustum. Deterministic per seed.
Scene generate_scene(std::uint64_t seed, int n_objects, const SynthConfig& cfg = {});

struct Rendered {
  std::vector<double> image;  // [3,H,W], values in [0,1]
  std::vector<double> depth;  // [H,W] nearest surface depth, +inf background
  std::vector<kitti::Label> labels;
  Index width = 0, height = 0;
};

/// Flat-shaded faces with per-pixel exact plane depth; depth ordering keeps
/// the nearest surface. Labels carry the exact projected 2D boxes.
Rendered render(const Scene& scene);

/// Write a KITTI-layout dataset: image_2/*.ppm, label_2/*.txt, calib/*.txt,
/// depth/*.bin (raw float32 LE with a 3-int32 header).
void write_dataset(const std::string& dir, std::uint64_t seed, int scenes,
                   int min_objects, int max_objects, const SynthConfig& cfg = {});

}  // namespace auxdepth::synth
