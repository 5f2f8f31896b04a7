#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "auxdepth/evaluator.hpp"
#include "auxdepth/lid.hpp"
#include "auxdepth/synth.hpp"

using namespace auxdepth;
namespace fs = std::filesystem;

TEST_CASE("same seed produces bit-identical scenes and renders") {
  const auto a = synth::generate_scene(42, 4);
  const auto b = synth::generate_scene(42, 4);
  REQUIRE(a.boxes.size() == b.boxes.size());
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    CHECK(a.boxes[i].x == b.boxes[i].x);
    CHECK(a.boxes[i].z == b.boxes[i].z);
    CHECK(a.boxes[i].ry == b.boxes[i].ry);
  }
  const auto ra = synth::render(a);
  const auto rb = synth::render(b);
  for (std::size_t i = 0; i < ra.image.size(); ++i) CHECK(ra.image[i] == rb.image[i]);
  for (std::size_t i = 0; i < ra.depth.size(); ++i) {
    const bool both_inf = std::isinf(ra.depth[i]) && std::isinf(rb.depth[i]);
    CHECK((both_inf || ra.depth[i] == rb.depth[i]));
  }
}

TEST_CASE("empty scene renders a valid background with all-sentinel depth") {
  const auto scene = synth::generate_scene(7, 0);
  CHECK(scene.boxes.empty());
  const auto r = synth::render(scene);
  CHECK(r.labels.empty());
  for (double d : r.depth) CHECK(std::isinf(d));
  for (double v : r.image) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("sampled boxes respect the depth range and non-overlap bound") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto scene = synth::generate_scene(seed, 4);
    for (const auto& b : scene.boxes) {
      CHECK(b.z >= 5.0);
      CHECK(b.z <= 50.0);
    }
    for (std::size_t i = 0; i < scene.boxes.size(); ++i)
      for (std::size_t j = i + 1; j < scene.boxes.size(); ++j)
        CHECK(iou_bev(scene.boxes[i], scene.boxes[j]) < 0.1);
  }
}

TEST_CASE("rendered depth inside a silhouette stays within the object's extent") {
  const auto scene = synth::generate_scene(3, 1);
  REQUIRE(scene.boxes.size() == 1);
  const auto& b = scene.boxes[0];
  const auto r = synth::render(scene);
  const double diag = 0.5 * std::hypot(b.l, b.w);
  int covered = 0;
  for (Index i = 0; i < r.height * r.width; ++i) {
    if (std::isinf(r.depth[static_cast<std::size_t>(i)])) continue;
    ++covered;
    CHECK(r.depth[static_cast<std::size_t>(i)] >= b.z - diag - 1e-9);
    CHECK(r.depth[static_cast<std::size_t>(i)] <= b.z + diag + 1e-9);
  }
  CHECK(covered > 0);
}

TEST_CASE("depth at the projected box center sits near the box depth") {
  const auto scene = synth::generate_scene(11, 1);
  const auto& b = scene.boxes[0];
  const auto r = synth::render(scene);
  const auto [u, v] = scene.calib.project(b.x, b.y - 0.5 * b.h, b.z);
  const Index c = static_cast<Index>(u);
  const Index row = static_cast<Index>(v);
  const double d = r.depth[static_cast<std::size_t>(row * r.width + c)];
  CHECK(std::isfinite(d));
  CHECK(d >= b.z - 0.5 * b.l - 1e-6);
  CHECK(d <= b.z + 0.5 * b.l + 1e-6);
}

TEST_CASE("label 2D boxes equal the projected-corner oracle") {
  const auto scene = synth::generate_scene(13, 4);
  const auto r = synth::render(scene);
  REQUIRE(r.labels.size() == scene.boxes.size());
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    const auto& b = scene.boxes[i];
    const auto corners = bev_corners(b);
    double umin = 1e30, umax = -1e30, vmin = 1e30, vmax = -1e30;
    for (int k = 0; k < 4; ++k)
      for (double y : {b.y, b.y - b.h}) {
        const auto [u, v] = scene.calib.project(corners[static_cast<std::size_t>(k)].x(), y,
                                                corners[static_cast<std::size_t>(k)].y());
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
    CHECK(r.labels[i].x1 == doctest::Approx(std::clamp(umin, 0.0, 320.0)).epsilon(1e-9));
    CHECK(r.labels[i].x2 == doctest::Approx(std::clamp(umax, 0.0, 320.0)).epsilon(1e-9));
    CHECK(r.labels[i].y1 == doctest::Approx(std::clamp(vmin, 0.0, 96.0)).epsilon(1e-9));
    CHECK(r.labels[i].y2 == doctest::Approx(std::clamp(vmax, 0.0, 96.0)).epsilon(1e-9));
  }
}

TEST_CASE("depth_to_bin is valid for every supervised pixel") {
  lid::Config lc{1.0, 65.0, 32, lid::Formula::Standard};
  const auto scene = synth::generate_scene(17, 5);
  const auto r = synth::render(scene);
  for (double d : r.depth) {
    if (std::isinf(d)) continue;
    const int bin = lid::depth_to_bin(d, lc);
    CHECK(bin >= 0);
    CHECK(bin < lc.bins);
  }
}

TEST_CASE("evaluator round trip: labels against themselves score 100") {
  const auto scene = synth::generate_scene(19, 5);
  const auto r = synth::render(scene);
  eval::EvalConfig cfg;
  cfg.iou_threshold = 0.7;
  std::vector<eval::Frame> frames(1);
  frames[0].id = 0;
  frames[0].gts = r.labels;
  for (const auto& lb : r.labels) {
    auto det = lb;
    det.has_score = true;
    det.score = 0.9;
    frames[0].dets.push_back(det);
  }
  const auto difficulties = {kitti::Difficulty::Easy, kitti::Difficulty::Moderate,
                             kitti::Difficulty::Hard};
  for (auto level : difficulties) {
    bool has_any = false;
    for (const auto& gt : frames[0].gts) {
      const auto d = kitti::classify_difficulty(gt);
      if (d != kitti::Difficulty::Ignored && static_cast<int>(d) <= static_cast<int>(level))
        has_any = true;
    }
    if (has_any)
      CHECK(eval::ap40(frames, eval::Metric::Ap3d, level, cfg) == doctest::Approx(100.0));
  }
}

TEST_CASE("dataset files round-trip through the writers and readers") {
  const fs::path dir = fs::temp_directory_path() / "auxdepth_synth_test";
  fs::remove_all(dir);
  synth::write_dataset(dir.string(), 123, 2, 2, 3);
  CHECK(fs::exists(dir / "image_2" / "000000.ppm"));
  CHECK(fs::exists(dir / "label_2" / "000001.txt"));
  CHECK(fs::exists(dir / "calib" / "000000.txt"));
  CHECK(fs::exists(dir / "depth" / "000001.bin"));

  Index h = 0, w = 0;
  const auto img = kitti::read_ppm((dir / "image_2" / "000000.ppm").string(), h, w);
  CHECK(h == 96);
  CHECK(w == 320);
  CHECK(img.size() == static_cast<std::size_t>(3 * h * w));
  for (double v : img) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  const auto labels = kitti::read_label_file((dir / "label_2" / "000000.txt").string());
  CHECK(labels.size() >= 2);
  for (const auto& lb : labels) CHECK(lb.type == "Car");

  const auto calib = kitti::read_calib_file((dir / "calib" / "000000.txt").string());
  CHECK(calib.fx() == doctest::Approx(300.0));

  Index dh = 0, dw = 0;
  const auto depth = kitti::read_depth((dir / "depth" / "000000.bin").string(), dh, dw);
  CHECK(dh == 96);
  CHECK(dw == 320);
  int finite = 0;
  for (double d : depth)
    if (std::isfinite(d)) ++finite;
  CHECK(finite > 0);
  fs::remove_all(dir);
}

TEST_CASE("impossible placement raises a generation error") {
  synth::SynthConfig cfg;
  cfg.max_rejections = 50;
  CHECK_THROWS_AS(synth::generate_scene(1, 500, cfg), Error);
}
