#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "auxdepth/evaluator.hpp"
#include "oracles.hpp"

using namespace auxdepth;
namespace fs = std::filesystem;

namespace {

Box3D make_box(double x, double z, double ry, double w = 1.6, double l = 3.9,
               double h = 1.5, double y = 1.65) {
  Box3D b;
  b.x = x;
  b.y = y;
  b.z = z;
  b.w = w;
  b.l = l;
  b.h = h;
  b.ry = ry;
  return b;
}

// Easy-qualifying Car label whose 3D box is exact; the 2D box is synthetic
// but tall enough for the Easy band.
kitti::Label make_gt(double x, double z, double ry, double u = 100.0) {
  kitti::Label lb;
  lb.type = "Car";
  lb.x1 = u;
  lb.y1 = 80.0;
  lb.x2 = u + 60.0;
  lb.y2 = 130.0;  // 50 px tall
  lb.h = 1.5;
  lb.w = 1.6;
  lb.l = 3.9;
  lb.x = x;
  lb.y = 1.65;
  lb.z = z;
  lb.ry = ry;
  return lb;
}

kitti::Label as_det(const kitti::Label& gt, double score) {
  kitti::Label d = gt;
  d.has_score = true;
  d.score = score;
  return d;
}

}  // namespace

TEST_CASE("BEV IoU closed forms") {
  const Box3D a = make_box(0.0, 10.0, 0.3);
  CHECK(iou_bev(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  const Box3D far = make_box(30.0, 60.0, 1.0);
  CHECK(iou_bev(a, far) == 0.0);

  // axis-aligned unit squares offset by 0.5: IoU = 0.5 / 1.5 = 1/3
  const Box3D s1 = make_box(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
  Box3D s2 = s1;
  s2.x = 0.5;
  CHECK(std::abs(iou_bev(s1, s2) - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("3D IoU closed forms") {
  const Box3D a = make_box(0.0, 10.0, 0.0);
  CHECK(iou_3d(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  // same footprint, height intervals [0,2] vs [1,3] -> IoU 1/3
  Box3D b1 = make_box(0.0, 5.0, 0.0, 2.0, 2.0, 2.0, 2.0);
  Box3D b2 = b1;
  b2.y = 3.0;
  CHECK(std::abs(iou_3d(b1, b2) - 1.0 / 3.0) < 1e-12);

  Box3D degenerate = a;
  degenerate.w = 0.0;
  CHECK(iou_3d(a, degenerate) == 0.0);
  CHECK(iou_bev(a, degenerate) == 0.0);
}

TEST_CASE("IoU is symmetric and bounded") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const Box3D a = make_box(rng.uniform(-3, 3), rng.uniform(5, 12), rng.uniform(-M_PI, M_PI),
                             rng.uniform(1.0, 2.5), rng.uniform(2.5, 5.0),
                             rng.uniform(1.0, 2.0), rng.uniform(1.0, 2.0));
    const Box3D b = make_box(rng.uniform(-3, 3), rng.uniform(5, 12), rng.uniform(-M_PI, M_PI),
                             rng.uniform(1.0, 2.5), rng.uniform(2.5, 5.0),
                             rng.uniform(1.0, 2.0), rng.uniform(1.0, 2.0));
    const double ab = iou_bev(a, b);
    CHECK(ab == doctest::Approx(iou_bev(b, a)).epsilon(1e-12));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0 + 1e-12);
    const double ab3 = iou_3d(a, b);
    CHECK(ab3 == doctest::Approx(iou_3d(b, a)).epsilon(1e-12));
    CHECK(ab3 >= 0.0);
    CHECK(ab3 <= 1.0 + 1e-12);
  }
}

TEST_CASE("yaw mod pi equivalence for symmetric footprints") {
  const Box3D a = make_box(1.0, 8.0, 0.7);
  Box3D b = a;
  b.ry = wrap_angle(a.ry + M_PI);
  CHECK(iou_bev(a, b) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(iou_3d(a, b) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rigid motions leave both IoUs unchanged") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Box3D a = make_box(rng.uniform(-2, 2), rng.uniform(4, 10), rng.uniform(-2, 2));
    const Box3D b = make_box(rng.uniform(-2, 2), rng.uniform(4, 10), rng.uniform(-2, 2));
    const double theta = rng.uniform(-M_PI, M_PI);
    const double tx = rng.uniform(-20, 20), tz = rng.uniform(-20, 20);
    auto moved = [&](const Box3D& box) {
      Box3D m = box;
      const double c = std::cos(theta), s = std::sin(theta);
      m.x = box.x * c + box.z * s + tx;
      m.z = -box.x * s + box.z * c + tz;
      m.ry = wrap_angle(box.ry + theta);
      return m;
    };
    CHECK(std::abs(iou_bev(moved(a), moved(b)) - iou_bev(a, b)) < 1e-9);
    CHECK(std::abs(iou_3d(moved(a), moved(b)) - iou_3d(a, b)) < 1e-9);
  }
}

TEST_CASE("clipped polygon area equals a direct shoelace evaluation") {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const Box3D a = make_box(rng.uniform(-2, 2), rng.uniform(4, 10), rng.uniform(-2, 2));
    const Box3D b = make_box(rng.uniform(-2, 2), rng.uniform(4, 10), rng.uniform(-2, 2));
    const auto ca = bev_corners(a);
    const auto cb = bev_corners(b);
    const auto clipped = clip_convex(std::vector<Vec2>(ca.begin(), ca.end()),
                                     std::vector<Vec2>(cb.begin(), cb.end()));
    double shoelace = 0.0;
    for (std::size_t i = 0; i < clipped.size(); ++i) {
      const Vec2& p = clipped[i];
      const Vec2& q = clipped[(i + 1) % clipped.size()];
      shoelace += p.x() * q.y() - q.x() * p.y();
    }
    shoelace = clipped.size() < 3 ? 0.0 : std::abs(0.5 * shoelace);
    CHECK(polygon_area(clipped) == doctest::Approx(shoelace).epsilon(1e-12));
  }
}

TEST_CASE("IoU agrees with the Monte-Carlo oracle on random pairs") {
  Rng rng(11);
  Rng mc_rng(1234);
  for (int t = 0; t < 25; ++t) {
    const Box3D a = make_box(rng.uniform(-2, 2), rng.uniform(4, 9), rng.uniform(-M_PI, M_PI),
                             rng.uniform(1.2, 2.2), rng.uniform(3.0, 4.8),
                             rng.uniform(1.2, 1.8), rng.uniform(1.2, 1.8));
    Box3D b = a;
    b.x += rng.uniform(-2.0, 2.0);
    b.z += rng.uniform(-2.0, 2.0);
    b.y += rng.uniform(-0.5, 0.5);
    b.ry = rng.uniform(-M_PI, M_PI);
    CHECK(std::abs(iou_bev(a, b) - oracle::mc_iou_bev(a, b, 200000, mc_rng)) < 0.02);
    CHECK(std::abs(iou_3d(a, b) - oracle::mc_iou_3d(a, b, 200000, mc_rng)) < 0.02);
  }
}

TEST_CASE("ap40 trivial cases") {
  eval::EvalConfig cfg;
  std::vector<eval::Frame> frames(1);
  frames[0].id = 0;
  frames[0].gts = {make_gt(0.0, 10.0, 0.2), make_gt(5.0, 20.0, -0.4)};
  SUBCASE("perfect detections score 100") {
    frames[0].dets = {as_det(frames[0].gts[0], 0.9), as_det(frames[0].gts[1], 0.8)};
    CHECK(eval::ap40(frames, eval::Metric::Ap3d, kitti::Difficulty::Easy, cfg) ==
          doctest::Approx(100.0).epsilon(1e-12));
    CHECK(eval::ap40(frames, eval::Metric::ApBev, kitti::Difficulty::Hard, cfg) ==
          doctest::Approx(100.0).epsilon(1e-12));
  }
  SUBCASE("no detections score 0") {
    CHECK(eval::ap40(frames, eval::Metric::Ap3d, kitti::Difficulty::Easy, cfg) == 0.0);
  }
}

TEST_CASE("planted-error fixture matches the hand-computed AP40") {
  // 10 gts over 5 frames; predictions drop two (planted misses) and add one
  // far-away false positive whose score ranks 5th.
  eval::EvalConfig cfg;
  std::vector<eval::Frame> frames(5);
  std::vector<kitti::Label> gts;
  for (int f = 0; f < 5; ++f) {
    frames[static_cast<std::size_t>(f)].id = f;
    for (int k = 0; k < 2; ++k)
      gts.push_back(make_gt(-6.0 + 2.0 * f, 8.0 + 3.0 * (2 * f + k), 0.1 * f,
                            40.0 + 80.0 * k));
  }
  for (int f = 0; f < 5; ++f)
    frames[static_cast<std::size_t>(f)].gts = {gts[static_cast<std::size_t>(2 * f)],
                                               gts[static_cast<std::size_t>(2 * f + 1)]};
  // detections: drop gt 3 (frame 1) and gt 9 (frame 4)
  const double tp_scores[8] = {0.95, 0.90, 0.85, 0.80, 0.70, 0.65, 0.60, 0.55};
  int s = 0;
  for (int g = 0; g < 10; ++g) {
    if (g == 3 || g == 9) continue;
    frames[static_cast<std::size_t>(g / 2)].dets.push_back(
        as_det(gts[static_cast<std::size_t>(g)], tp_scores[s++]));
  }
  kitti::Label fp = make_gt(20.0, 60.0, 0.0, 250.0);
  frames[2].dets.push_back(as_det(fp, 0.75));

  const double want = 100.0 * (16.0 + 16.0 * (8.0 / 9.0)) / 40.0;  // 75.5555...
  for (auto metric : {eval::Metric::Ap3d, eval::Metric::ApBev})
    for (auto level :
         {kitti::Difficulty::Easy, kitti::Difficulty::Moderate, kitti::Difficulty::Hard}) {
      const double got = eval::ap40(frames, metric, level, cfg);
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
      CHECK(got == doctest::Approx(oracle::reference_ap40(frames, metric, level, cfg))
                       .epsilon(1e-12));
    }
}

TEST_CASE("ap40 equals the exhaustive PR oracle on random instances") {
  Rng rng(17);
  eval::EvalConfig cfg;
  cfg.iou_threshold = 0.5;
  for (int t = 0; t < 60; ++t) {
    const int nframes = 1 + static_cast<int>(rng.next_below(3));
    std::vector<eval::Frame> frames(static_cast<std::size_t>(nframes));
    for (int f = 0; f < nframes; ++f) {
      frames[static_cast<std::size_t>(f)].id = f;
      const int ngt = static_cast<int>(rng.next_below(6));
      for (int g = 0; g < ngt; ++g)
        frames[static_cast<std::size_t>(f)].gts.push_back(
            make_gt(rng.uniform(-10, 10), rng.uniform(5, 40), rng.uniform(-M_PI, M_PI)));
      const int ndet = static_cast<int>(rng.next_below(15));
      for (int d = 0; d < ndet; ++d) {
        kitti::Label det;
        if (!frames[static_cast<std::size_t>(f)].gts.empty() && rng.uniform() < 0.6) {
          det = frames[static_cast<std::size_t>(f)]
                    .gts[rng.next_below(frames[static_cast<std::size_t>(f)].gts.size())];
          det.x += rng.uniform(-1.5, 1.5);
          det.z += rng.uniform(-1.5, 1.5);
        } else {
          det = make_gt(rng.uniform(-10, 10), rng.uniform(5, 40), rng.uniform(-M_PI, M_PI));
        }
        det.has_score = true;
        det.score = rng.uniform(0.0, 1.0);
        frames[static_cast<std::size_t>(f)].dets.push_back(det);
      }
    }
    for (auto metric : {eval::Metric::Ap3d, eval::Metric::ApBev})
      for (auto level : {kitti::Difficulty::Easy, kitti::Difficulty::Hard}) {
        const double got = eval::ap40(frames, metric, level, cfg);
        const double want = oracle::reference_ap40(frames, metric, level, cfg);
        CHECK(std::abs(got - want) < 1e-9);
      }
  }
}

TEST_CASE("removing a false positive never lowers AP40") {
  Rng rng(19);
  eval::EvalConfig cfg;
  cfg.iou_threshold = 0.5;
  for (int t = 0; t < 20; ++t) {
    std::vector<eval::Frame> frames(1);
    frames[0].id = 0;
    for (int g = 0; g < 4; ++g)
      frames[0].gts.push_back(make_gt(rng.uniform(-8, 8), rng.uniform(5, 30), 0.0));
    for (int g = 0; g < 4; ++g)
      if (rng.uniform() < 0.7) frames[0].dets.push_back(as_det(frames[0].gts[static_cast<std::size_t>(g)], rng.uniform(0.5, 1.0)));
    // a detection overlapping nothing
    kitti::Label fp = make_gt(30.0, 70.0, 0.0);
    fp.has_score = true;
    fp.score = rng.uniform(0.0, 1.0);
    auto with_fp = frames;
    with_fp[0].dets.push_back(fp);
    const double base = eval::ap40(frames, eval::Metric::Ap3d, kitti::Difficulty::Easy, cfg);
    const double worse = eval::ap40(with_fp, eval::Metric::Ap3d, kitti::Difficulty::Easy, cfg);
    CHECK(base >= worse - 1e-12);
  }
}

TEST_CASE("difficulty filtering is cumulative and ignores matched harder gts") {
  eval::EvalConfig cfg;
  std::vector<eval::Frame> frames(1);
  frames[0].id = 0;
  kitti::Label easy = make_gt(0.0, 10.0, 0.0, 40.0);
  kitti::Label moderate = make_gt(6.0, 30.0, 0.0, 200.0);
  moderate.occluded = 1;  // drops it out of the Easy band
  frames[0].gts = {easy, moderate};
  frames[0].dets = {as_det(easy, 0.9), as_det(moderate, 0.8)};
  CHECK(kitti::classify_difficulty(moderate) == kitti::Difficulty::Moderate);
  // Easy level: the moderate gt and its detection are ignored, not FP
  CHECK(eval::ap40(frames, eval::Metric::Ap3d, kitti::Difficulty::Easy, cfg) ==
        doctest::Approx(100.0));
  CHECK(eval::ap40(frames, eval::Metric::Ap3d, kitti::Difficulty::Moderate, cfg) ==
        doctest::Approx(100.0));
}

TEST_CASE("detections inside DontCare regions are ignored") {
  eval::EvalConfig cfg;
  std::vector<eval::Frame> frames(1);
  frames[0].id = 0;
  kitti::Label gt = make_gt(0.0, 10.0, 0.0, 40.0);
  kitti::Label dontcare;
  dontcare.type = "DontCare";
  dontcare.x1 = 200.0;
  dontcare.y1 = 50.0;
  dontcare.x2 = 260.0;
  dontcare.y2 = 120.0;
  frames[0].gts = {gt, dontcare};
  kitti::Label stray = make_gt(25.0, 55.0, 0.0, 210.0);  // 2D box inside the region
  frames[0].dets = {as_det(gt, 0.9), as_det(stray, 0.85)};
  CHECK(eval::ap40(frames, eval::Metric::Ap3d, kitti::Difficulty::Easy, cfg) ==
        doctest::Approx(100.0));
}

TEST_CASE("evaluate_dataset end to end through label files") {
  const fs::path dir = fs::temp_directory_path() / "auxdepth_eval_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "gt");
  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "empty");
  for (int f = 0; f < 3; ++f) {
    std::vector<kitti::Label> gts = {make_gt(-2.0, 8.0 + f, 0.3), make_gt(3.0, 14.0 + f, -0.2)};
    char name[16];
    std::snprintf(name, sizeof(name), "%06d.txt", f);
    kitti::write_label_file((dir / "gt" / name).string(), gts);
    std::vector<kitti::Label> dets;
    for (std::size_t i = 0; i < gts.size(); ++i) dets.push_back(as_det(gts[i], 0.9 - 0.1 * static_cast<double>(i)));
    kitti::write_label_file((dir / "pred" / name).string(), dets);
  }
  eval::EvalConfig cfg;
  SUBCASE("predictions equal to ground truth score 100 everywhere") {
    const auto report = eval::evaluate_dataset((dir / "pred").string(), (dir / "gt").string(), cfg);
    for (int i = 0; i < 3; ++i) {
      CHECK(report.ap3d[i] == doctest::Approx(100.0));
      CHECK(report.apbev[i] == doctest::Approx(100.0));
    }
    const std::string text = eval::report_text(report);
    CHECK(text.find("AP_3D") != std::string::npos);
    CHECK(text.find("AP_BEV") != std::string::npos);
    CHECK(text.find("100.00") != std::string::npos);
  }
  SUBCASE("an empty prediction directory scores 0 everywhere") {
    const auto report = eval::evaluate_dataset((dir / "empty").string(), (dir / "gt").string(), cfg);
    for (int i = 0; i < 3; ++i) {
      CHECK(report.ap3d[i] == 0.0);
      CHECK(report.apbev[i] == 0.0);
    }
  }
  SUBCASE("a missing prediction file is an error naming the frame") {
    fs::remove(dir / "pred" / "000001.txt");
    CHECK_THROWS_WITH_AS(
        eval::evaluate_dataset((dir / "pred").string(), (dir / "gt").string(), cfg),
        doctest::Contains("000001"), Error);
  }
  SUBCASE("an orphan prediction file is an error naming the frame") {
    kitti::write_label_file((dir / "pred" / "000007.txt").string(), {});
    CHECK_THROWS_WITH_AS(
        eval::evaluate_dataset((dir / "pred").string(), (dir / "gt").string(), cfg),
        doctest::Contains("000007"), Error);
  }
  fs::remove_all(dir);
}

TEST_CASE("protocol constant: Car IoU threshold defaults to 0.7") {
  eval::EvalConfig cfg;
  CHECK(cfg.iou_threshold == 0.7);
  CHECK(cfg.class_name == "Car");
}
