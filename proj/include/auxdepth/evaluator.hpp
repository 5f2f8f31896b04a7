#pragma once

// KITTI-protocol evaluation: rotated BEV/3D IoU matching and AP40 per
// difficulty. Matches aggregate across all frames before the single global
// PR curve is computed.

#include <string>
#include <vector>

#include "auxdepth/geometry.hpp"
#include "auxdepth/kitti.hpp"

namespace auxdepth::eval {

enum class Metric { Ap3d, ApBev };

struct EvalConfig {
  std::string class_name = "Car";
  double iou_threshold = 0.7;
  /// A detection whose 2D intersection with a DontCare region exceeds this
  /// fraction of its own area is neither TP nor FP.
  double dontcare_overlap = 0.5;
};

struct EvalReport {
  std::string class_name = "Car";
  double iou_threshold = 0.7;
  // indexed by kitti::Difficulty (Easy, Moderate, Hard)
  double ap3d[3] = {0.0, 0.0, 0.0};
  double apbev[3] = {0.0, 0.0, 0.0};
};

struct Frame {
  int id = 0;
  std::vector<kitti::Label> gts;
  std::vector<kitti::Label> dets;  // must carry scores
};

/// Camera-frame 3D box of a KITTI label (y is the bottom face).
Box3D label_box3d(const kitti::Label& label);

/// AP40 in percent for one difficulty level and metric. Greedy matching in
/// descending score order (ties by frame id, then input order); each gt is
/// used at most once; a match requires IoU >= threshold. Ground truths of a
/// harder difficulty than `level` and DontCare regions are ignored:
/// detections assigned to them count neither TP nor FP.
double ap40(const std::vector<Frame>& frames, Metric metric, kitti::Difficulty level,
            const EvalConfig& cfg);

EvalReport evaluate_frames(const std::vector<Frame>& frames, const EvalConfig& cfg);

/// Reads `<id>.txt` label files from both directories. Ground-truth ids
/// drive the evaluation; a prediction file with no ground-truth counterpart
/// is an error. A missing prediction file is an error unless the prediction
/// directory holds no label files at all (an empty detector).
EvalReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir,
                            const EvalConfig& cfg);

/// Fixed-width text table with one row per metric and one column per
/// difficulty.
std::string report_text(const EvalReport& report);

}  // namespace auxdepth::eval
