#include "auxdepth/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace auxdepth {

double iou_2d(const Box2D& a, const Box2D& b) {
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Anchor> generate_anchors(Index feat_h, Index feat_w, Index stride,
                                     const HeadConfig& cfg, const lid::Config& lid_cfg) {
  if (cfg.scales.empty()) fail(Error::Kind::Config, "anchors: scale list is empty");
  if (cfg.ratios.empty()) fail(Error::Kind::Config, "anchors: ratio list is empty");
  std::vector<Anchor> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h * feat_w) * cfg.scales.size() *
                  cfg.ratios.size());
  const double span = lid_cfg.d_max - lid_cfg.d_min;
  for (Index r = 0; r < feat_h; ++r) {
    // lower image rows get nearer depth priors
    const double z0 = lid_cfg.d_max - span * (static_cast<double>(r) + 0.5) /
                                          static_cast<double>(feat_h);
    const double cy = (static_cast<double>(r) + 0.5) * static_cast<double>(stride);
    for (Index c = 0; c < feat_w; ++c) {
      const double cx = (static_cast<double>(c) + 0.5) * static_cast<double>(stride);
      for (double scale : cfg.scales)
        for (double ratio : cfg.ratios) {
          const double root = std::sqrt(ratio);  // ratio = height / width
          const double w = scale / root;
          const double h = scale * root;
          Anchor a;
          a.box = {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
          a.z0 = z0;
          a.w0 = cfg.prior_w;
          a.h0 = cfg.prior_h;
          a.l0 = cfg.prior_l;
          a.ry0 = 0.0;
          anchors.push_back(a);
        }
    }
  }
  return anchors;
}

std::vector<AnchorMatch> match_anchors(const std::vector<Anchor>& anchors,
                                       const std::vector<Box2D>& gts, double pos_iou,
                                       double neg_iou) {
  std::vector<AnchorMatch> matches(anchors.size());
  if (gts.empty()) return matches;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    double best = 0.0;
    int best_idx = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou_2d(anchors[i].box, gts[g]);
      if (v > best) {  // ties keep the lowest gt index
        best = v;
        best_idx = static_cast<int>(g);
      }
    }
    AnchorMatch& m = matches[i];
    if (best >= pos_iou) {
      m.label = AnchorMatch::Label::Positive;
      m.gt = best_idx;
      m.iou = best;
    } else if (best < neg_iou) {
      m.label = AnchorMatch::Label::Negative;
    } else {
      m.label = AnchorMatch::Label::Ignore;
    }
  }
  // forced coverage: in gt index order, each gt claims its best still
  // unclaimed anchor (ties to the lowest anchor index), so no two gts
  // compete for one anchor
  std::vector<char> claimed(anchors.size(), 0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    double best = 0.0;
    std::size_t best_a = anchors.size();
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      if (claimed[i]) continue;
      const double v = iou_2d(anchors[i].box, gts[g]);
      if (v > best) {
        best = v;
        best_a = i;
      }
    }
    if (best_a == anchors.size() || best <= 0.0) continue;
    claimed[best_a] = 1;
    matches[best_a].label = AnchorMatch::Label::Positive;
    matches[best_a].gt = static_cast<int>(g);
    matches[best_a].iou = best;
  }
  return matches;
}

std::array<double, kRegressionDims> encode_box(const BoxGeom& gt, const Anchor& anchor) {
  const double aw = anchor.box.width();
  const double ah = anchor.box.height();
  const double acx = 0.5 * (anchor.box.x1 + anchor.box.x2);
  const double acy = 0.5 * (anchor.box.y1 + anchor.box.y2);
  const double gw = gt.box2d.width();
  const double gh = gt.box2d.height();
  const double gcx = 0.5 * (gt.box2d.x1 + gt.box2d.x2);
  const double gcy = 0.5 * (gt.box2d.y1 + gt.box2d.y2);
  return {
      (gcx - acx) / aw,          (gcy - acy) / ah,
      std::log(gw / aw),         std::log(gh / ah),
      (gt.u - acx) / aw,         (gt.v - acy) / ah,
      std::log(gt.z / anchor.z0),
      std::log(gt.w / anchor.w0), std::log(gt.h / anchor.h0), std::log(gt.l / anchor.l0),
      wrap_angle(gt.ry - anchor.ry0),
  };
}

BoxGeom decode_box(const Anchor& anchor, const double* d, Index anchor_index) {
  for (int i = 0; i < kRegressionDims; ++i)
    if (!std::isfinite(d[i]))
      fail(Error::Kind::Decode, "decode_box: non-finite delta " + std::to_string(i) +
                                    " for anchor " + std::to_string(anchor_index));
  const double aw = anchor.box.width();
  const double ah = anchor.box.height();
  const double acx = 0.5 * (anchor.box.x1 + anchor.box.x2);
  const double acy = 0.5 * (anchor.box.y1 + anchor.box.y2);
  BoxGeom g;
  const double cx = acx + d[0] * aw;
  const double cy = acy + d[1] * ah;
  const double w = aw * std::exp(d[2]);
  const double h = ah * std::exp(d[3]);
  g.box2d = {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  g.u = acx + d[4] * aw;
  g.v = acy + d[5] * ah;
  g.z = anchor.z0 * std::exp(d[6]);
  g.w = anchor.w0 * std::exp(d[7]);
  g.h = anchor.h0 * std::exp(d[8]);
  g.l = anchor.l0 * std::exp(d[9]);
  g.ry = wrap_angle(anchor.ry0 + d[10]);
  return g;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;  // stable: ties keep input order
  });
  std::vector<Detection> kept;
  std::vector<char> removed(dets.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (removed[j]) continue;
      if (iou_2d(dets[i].box2d, dets[j].box2d) > iou_thresh) removed[j] = 1;
    }
  }
  return kept;
}

std::vector<Detection> filter_by_score(const std::vector<Detection>& dets, double min_score) {
  std::vector<Detection> out;
  out.reserve(dets.size());
  for (const auto& d : dets)
    if (d.score >= min_score) out.push_back(d);
  return out;
}

}  // namespace auxdepth
