#include "auxdepth/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>

#include "auxdepth/head.hpp"

namespace auxdepth::eval {

namespace fs = std::filesystem;

Box3D label_box3d(const kitti::Label& lb) {
  Box3D b;
  b.x = lb.x;
  b.y = lb.y;
  b.z = lb.z;
  b.h = lb.h;
  b.w = lb.w;
  b.l = lb.l;
  b.ry = lb.ry;
  return b;
}

namespace {

struct Candidate {
  std::size_t frame;
  std::size_t det;  // input order within the frame
  double score;
};

double pair_iou(const kitti::Label& a, const kitti::Label& b, Metric metric) {
  const Box3D ba = label_box3d(a);
  const Box3D bb = label_box3d(b);
  return metric == Metric::Ap3d ? iou_3d(ba, bb) : iou_bev(ba, bb);
}

double dontcare_fraction(const kitti::Label& det, const kitti::Label& dc) {
  const Box2D d{det.x1, det.y1, det.x2, det.y2};
  const Box2D r{dc.x1, dc.y1, dc.x2, dc.y2};
  const double ix = std::min(d.x2, r.x2) - std::max(d.x1, r.x1);
  const double iy = std::min(d.y2, r.y2) - std::max(d.y1, r.y1);
  if (ix <= 0.0 || iy <= 0.0 || d.area() <= 0.0) return 0.0;
  return ix * iy / d.area();
}

}  // namespace

double ap40(const std::vector<Frame>& frames, Metric metric, kitti::Difficulty level,
            const EvalConfig& cfg) {
  // classify ground truths once per frame
  struct GtState {
    std::vector<std::size_t> valid;    // indices into frame.gts
    std::vector<std::size_t> ignored;  // same-class but filtered by difficulty
    std::vector<std::size_t> dontcare;
  };
  std::vector<GtState> states(frames.size());
  std::size_t total_valid = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t g = 0; g < frames[f].gts.size(); ++g) {
      const auto& gt = frames[f].gts[g];
      if (gt.type == "DontCare") {
        states[f].dontcare.push_back(g);
      } else if (gt.type == cfg.class_name) {
        const auto diff = kitti::classify_difficulty(gt);
        if (diff != kitti::Difficulty::Ignored &&
            static_cast<int>(diff) <= static_cast<int>(level))
          states[f].valid.push_back(g);
        else
          states[f].ignored.push_back(g);
      }
    }
    total_valid += states[f].valid.size();
  }
  if (total_valid == 0) return 0.0;

  std::vector<Candidate> cands;
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (std::size_t d = 0; d < frames[f].dets.size(); ++d)
      if (frames[f].dets[d].type == cfg.class_name)
        cands.push_back({f, d, frames[f].dets[d].score});
  std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (frames[a.frame].id != frames[b.frame].id)
      return frames[a.frame].id < frames[b.frame].id;
    return a.det < b.det;
  });

  // greedy matching in global score order; 0 = unused
  std::vector<std::vector<char>> gt_used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f)
    gt_used[f].assign(frames[f].gts.size(), 0);

  enum class Outcome { Tp, Fp, Ignored };
  std::vector<Outcome> outcomes(cands.size());
  for (std::size_t c = 0; c < cands.size(); ++c) {
    const auto& cand = cands[c];
    const auto& det = frames[cand.frame].dets[cand.det];
    const auto& st = states[cand.frame];
    double best = 0.0;
    std::size_t best_gt = 0;
    bool found = false;
    for (std::size_t g : st.valid) {
      if (gt_used[cand.frame][g]) continue;
      const double v = pair_iou(det, frames[cand.frame].gts[g], metric);
      if (v >= cfg.iou_threshold && v > best) {
        best = v;
        best_gt = g;
        found = true;
      }
    }
    if (found) {
      gt_used[cand.frame][best_gt] = 1;
      outcomes[c] = Outcome::Tp;
      continue;
    }
    bool ignore = false;
    for (std::size_t g : st.ignored)
      if (pair_iou(det, frames[cand.frame].gts[g], metric) >= cfg.iou_threshold) {
        ignore = true;
        break;
      }
    if (!ignore)
      for (std::size_t g : st.dontcare)
        if (dontcare_fraction(det, frames[cand.frame].gts[g]) > cfg.dontcare_overlap) {
          ignore = true;
          break;
        }
    outcomes[c] = ignore ? Outcome::Ignored : Outcome::Fp;
  }

  // one global PR walk, then 40-point interpolation
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (std::size_t c = 0; c < cands.size(); ++c) {
    if (outcomes[c] == Outcome::Ignored) continue;
    if (outcomes[c] == Outcome::Tp)
      ++tp;
    else
      ++fp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_valid));
  }
  double acc = 0.0;
  for (int j = 1; j <= 40; ++j) {
    const double r = static_cast<double>(j) / 40.0;
    double best = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k)
      if (recall[k] >= r) best = std::max(best, precision[k]);
    acc += best;
  }
  return acc / 40.0 * 100.0;
}

EvalReport evaluate_frames(const std::vector<Frame>& frames, const EvalConfig& cfg) {
  EvalReport report;
  report.class_name = cfg.class_name;
  report.iou_threshold = cfg.iou_threshold;
  const kitti::Difficulty levels[3] = {kitti::Difficulty::Easy, kitti::Difficulty::Moderate,
                                       kitti::Difficulty::Hard};
  for (int i = 0; i < 3; ++i) {
    report.ap3d[i] = ap40(frames, Metric::Ap3d, levels[i], cfg);
    report.apbev[i] = ap40(frames, Metric::ApBev, levels[i], cfg);
  }
  return report;
}

EvalReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir,
                            const EvalConfig& cfg) {
  if (!fs::is_directory(gt_dir)) fail(Error::Kind::Eval, "gt dir not found: " + gt_dir);
  if (!fs::is_directory(pred_dir)) fail(Error::Kind::Eval, "pred dir not found: " + pred_dir);
  std::set<std::string> gt_ids, pred_ids;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.path().extension() == ".txt") gt_ids.insert(e.path().stem().string());
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.path().extension() == ".txt") pred_ids.insert(e.path().stem().string());
  for (const auto& id : pred_ids)
    if (!gt_ids.count(id))
      fail(Error::Kind::Eval, "prediction frame " + id + " has no ground-truth file");

  std::vector<Frame> frames;
  int running_id = 0;
  for (const auto& id : gt_ids) {
    Frame frame;
    // numeric ids keep their value for tie-breaking; otherwise insertion order
    try {
      frame.id = std::stoi(id);
    } catch (const std::exception&) {
      frame.id = running_id;
    }
    ++running_id;
    frame.gts = kitti::read_label_file((fs::path(gt_dir) / (id + ".txt")).string());
    const fs::path pred_path = fs::path(pred_dir) / (id + ".txt");
    if (fs::exists(pred_path)) {
      frame.dets = kitti::read_label_file(pred_path.string());
    } else if (!pred_ids.empty()) {
      fail(Error::Kind::Eval, "missing prediction file for frame " + id);
    }
    frames.push_back(std::move(frame));
  }
  return evaluate_frames(frames, cfg);
}

std::string report_text(const EvalReport& r) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-20s %8s %8s %8s\n",
                (r.class_name + " AP_R40 (%)").c_str(), "Easy", "Mod.", "Hard");
  out += buf;
  std::snprintf(buf, sizeof(buf), "AP_3D @IoU=%.2f      %8.2f %8.2f %8.2f\n", r.iou_threshold,
                r.ap3d[0], r.ap3d[1], r.ap3d[2]);
  out += buf;
  std::snprintf(buf, sizeof(buf), "AP_BEV@IoU=%.2f      %8.2f %8.2f %8.2f\n", r.iou_threshold,
                r.apbev[0], r.apbev[1], r.apbev[2]);
  out += buf;
  return out;
}

}  // namespace auxdepth::eval
