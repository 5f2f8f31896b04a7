#include "auxdepth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace auxdepth::synth {

namespace fs = std::filesystem;

namespace {

struct Vec3 {
  double x, y, z;
};

// the 8 box corners: bottom face then top face, counter-clockwise in BEV order
std::array<Vec3, 8> box_corners(const Box3D& b) {
  const auto bev = bev_corners(b);
  std::array<Vec3, 8> out;
  for (int i = 0; i < 4; ++i) {
    out[static_cast<std::size_t>(i)] = {bev[static_cast<std::size_t>(i)].x(), b.y,
                                        bev[static_cast<std::size_t>(i)].y()};
    out[static_cast<std::size_t>(i + 4)] = {bev[static_cast<std::size_t>(i)].x(), b.y - b.h,
                                            bev[static_cast<std::size_t>(i)].y()};
  }
  return out;
}

constexpr int kFaces[6][4] = {
    {0, 1, 2, 3},  // bottom
    {4, 5, 6, 7},  // top
    {0, 1, 5, 4}, {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7},
};

bool box_in_frustum(const Box3D& b, const SynthConfig& cfg) {
  const auto corners = box_corners(b);
  kitti::Calibration calib;
  calib.p2 = {cfg.focal, 0.0, cfg.cx, 0.0, 0.0, cfg.focal, cfg.cy, 0.0, 0.0, 0.0, 1.0, 0.0};
  for (const auto& c : corners) {
    if (c.z < 0.5) return false;
    const auto [u, v] = calib.project(c.x, c.y, c.z);
    if (u < 0.0 || u >= static_cast<double>(cfg.width) || v < 0.0 ||
        v >= static_cast<double>(cfg.height))
      return false;
  }
  return true;
}

struct Rect {
  double x1, y1, x2, y2;
};

Rect projected_rect(const Box3D& b, const kitti::Calibration& calib) {
  const auto corners = box_corners(b);
  Rect r{1e30, 1e30, -1e30, -1e30};
  for (const auto& c : corners) {
    const auto [u, v] = calib.project(c.x, c.y, c.z);
    r.x1 = std::min(r.x1, u);
    r.y1 = std::min(r.y1, v);
    r.x2 = std::max(r.x2, u);
    r.y2 = std::max(r.y2, v);
  }
  return r;
}

double rect_iou(const Rect& a, const Rect& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, int n_objects, const SynthConfig& cfg) {
  if (n_objects < 0) fail(Error::Kind::Generation, "generate_scene: negative object count");
  Scene scene;
  scene.seed = seed;
  scene.width = cfg.width;
  scene.height = cfg.height;
  scene.calib.p2 = {cfg.focal, 0.0, cfg.cx, 0.0, 0.0, cfg.focal,
                    cfg.cy,    0.0, 0.0,   0.0, 1.0, 0.0};
  Rng rng(seed ^ 0xA3C59AC2F1E7D4B9ull);
  int rejections = 0;
  while (static_cast<int>(scene.boxes.size()) < n_objects) {
    if (rejections > cfg.max_rejections)
      fail(Error::Kind::Generation, "generate_scene: could not place " +
                                        std::to_string(n_objects) + " objects after " +
                                        std::to_string(cfg.max_rejections) + " rejections");
    Box3D b;
    const bool near = rng.uniform() < cfg.near_depth_frac;
    b.z = near ? rng.uniform(cfg.depth_min, cfg.near_band_max)
               : rng.uniform(cfg.near_band_max, cfg.depth_max);
    const double half_span = b.z * static_cast<double>(cfg.width) / (2.0 * cfg.focal) - 3.0;
    b.x = rng.uniform(-std::max(half_span, 0.5), std::max(half_span, 0.5));
    b.y = cfg.cam_height;
    b.w = 1.6 * rng.uniform(0.8, 1.2);
    b.h = 1.6 * rng.uniform(0.8, 1.2);
    b.l = 3.9 * rng.uniform(0.8, 1.2);
    b.ry = rng.uniform(-M_PI, M_PI);
    bool ok = box_in_frustum(b, cfg);
    // labels mark every object unoccluded, so scenes must be occlusion-free:
    // reject image-space overlap as well as ground-plane overlap
    const Rect rect = projected_rect(b, scene.calib);
    for (const auto& other : scene.boxes) {
      if (!ok) break;
      if (iou_bev(b, other) >= cfg.max_bev_iou) ok = false;
      if (rect_iou(rect, projected_rect(other, scene.calib)) >= cfg.max_image_iou) ok = false;
    }
    if (!ok) {
      ++rejections;
      continue;
    }
    scene.boxes.push_back(b);
  }
  return scene;
}

Rendered render(const Scene& scene) {
  const Index h = scene.height, w = scene.width;
  const Index hw = h * w;
  Rendered out;
  out.width = w;
  out.height = h;
  out.image.assign(static_cast<std::size_t>(3 * hw), 0.0);
  out.depth.assign(static_cast<std::size_t>(hw), kDepthSentinel);

  // background: sky over ground shading
  const double horizon = scene.calib.cy();
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) {
      const double t = static_cast<double>(r) / static_cast<double>(h);
      const bool sky = static_cast<double>(r) < horizon;
      out.image[static_cast<std::size_t>(r * w + c)] = sky ? 0.55 - 0.2 * t : 0.32;
      out.image[static_cast<std::size_t>(hw + r * w + c)] = sky ? 0.65 - 0.2 * t : 0.33;
      out.image[static_cast<std::size_t>(2 * hw + r * w + c)] = sky ? 0.8 - 0.2 * t : 0.34;
    }

  const double fx = scene.calib.fx(), fy = scene.calib.fy();
  const double cx = scene.calib.cx(), cy = scene.calib.cy();
  Rng color_rng(scene.seed ^ 0x94D049BB133111EBull);
  std::vector<std::array<double, 3>> base_colors;
  for (std::size_t i = 0; i < scene.boxes.size(); ++i)
    base_colors.push_back({color_rng.uniform(0.2, 0.95), color_rng.uniform(0.2, 0.95),
                           color_rng.uniform(0.2, 0.95)});

  for (std::size_t bi = 0; bi < scene.boxes.size(); ++bi) {
    const Box3D& b = scene.boxes[bi];
    const auto corners = box_corners(b);
    for (int f = 0; f < 6; ++f) {
      const Vec3 p0 = corners[static_cast<std::size_t>(kFaces[f][0])];
      const Vec3 p1 = corners[static_cast<std::size_t>(kFaces[f][1])];
      const Vec3 p3 = corners[static_cast<std::size_t>(kFaces[f][3])];
      // plane basis: p0 + s*e1 + t*e2 for s,t in [0,1]
      const Vec3 e1{p1.x - p0.x, p1.y - p0.y, p1.z - p0.z};
      const Vec3 e2{p3.x - p0.x, p3.y - p0.y, p3.z - p0.z};
      const Vec3 n{e1.y * e2.z - e1.z * e2.y, e1.z * e2.x - e1.x * e2.z,
                   e1.x * e2.y - e1.y * e2.x};
      // projected bounding box of the face
      double umin = 1e30, umax = -1e30, vmin = 1e30, vmax = -1e30;
      for (int k = 0; k < 4; ++k) {
        const Vec3 p = corners[static_cast<std::size_t>(kFaces[f][k])];
        const auto [u, v] = scene.calib.project(p.x, p.y, p.z);
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
      const Index c0 = std::max<Index>(0, static_cast<Index>(std::floor(umin)));
      const Index c1 = std::min<Index>(w - 1, static_cast<Index>(std::ceil(umax)));
      const Index r0 = std::max<Index>(0, static_cast<Index>(std::floor(vmin)));
      const Index r1 = std::min<Index>(h - 1, static_cast<Index>(std::ceil(vmax)));
      const double shade = 0.7 + 0.05 * f;
      for (Index r = r0; r <= r1; ++r)
        for (Index c = c0; c <= c1; ++c) {
          // ray through the pixel center
          const Vec3 d{(static_cast<double>(c) + 0.5 - cx) / fx,
                       (static_cast<double>(r) + 0.5 - cy) / fy, 1.0};
          const double dn = d.x * n.x + d.y * n.y + d.z * n.z;
          if (std::abs(dn) < 1e-12) continue;
          const double t = (p0.x * n.x + p0.y * n.y + p0.z * n.z) / dn;
          if (t <= 0.0) continue;
          const Vec3 hit{d.x * t - p0.x, d.y * t - p0.y, d.z * t - p0.z};
          // local coordinates in the face basis
          const double e11 = e1.x * e1.x + e1.y * e1.y + e1.z * e1.z;
          const double e22 = e2.x * e2.x + e2.y * e2.y + e2.z * e2.z;
          const double e12 = e1.x * e2.x + e1.y * e2.y + e1.z * e2.z;
          const double h1 = hit.x * e1.x + hit.y * e1.y + hit.z * e1.z;
          const double h2 = hit.x * e2.x + hit.y * e2.y + hit.z * e2.z;
          const double det = e11 * e22 - e12 * e12;
          if (std::abs(det) < 1e-12) continue;
          const double s = (h1 * e22 - h2 * e12) / det;
          const double tt = (h2 * e11 - h1 * e12) / det;
          if (s < 0.0 || s > 1.0 || tt < 0.0 || tt > 1.0) continue;
          const double depth = d.z * t;  // camera-frame z of the hit
          auto& cell = out.depth[static_cast<std::size_t>(r * w + c)];
          if (depth < cell) {
            cell = depth;
            for (int ch = 0; ch < 3; ++ch)
              out.image[static_cast<std::size_t>(ch * hw + r * w + c)] =
                  std::clamp(base_colors[bi][static_cast<std::size_t>(ch)] * shade, 0.0, 1.0);
          }
        }
    }
  }

  // seeded pixel noise so overfit runs see texture, not flat patches
  Rng noise(scene.seed ^ 0xBF58476D1CE4E5B9ull);
  for (auto& v : out.image) v = std::clamp(v + noise.uniform(-0.02, 0.02), 0.0, 1.0);

  for (std::size_t bi = 0; bi < scene.boxes.size(); ++bi) {
    const Box3D& b = scene.boxes[bi];
    const auto corners = box_corners(b);
    double umin = 1e30, umax = -1e30, vmin = 1e30, vmax = -1e30;
    for (const auto& p : corners) {
      const auto [u, v] = scene.calib.project(p.x, p.y, p.z);
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
    kitti::Label lb;
    lb.type = "Car";
    lb.truncated = 0.0;
    lb.occluded = 0;
    lb.x1 = std::clamp(umin, 0.0, static_cast<double>(w));
    lb.y1 = std::clamp(vmin, 0.0, static_cast<double>(h));
    lb.x2 = std::clamp(umax, 0.0, static_cast<double>(w));
    lb.y2 = std::clamp(vmax, 0.0, static_cast<double>(h));
    lb.h = b.h;
    lb.w = b.w;
    lb.l = b.l;
    lb.x = b.x;
    lb.y = b.y;
    lb.z = b.z;
    lb.ry = b.ry;
    lb.alpha = wrap_angle(b.ry - std::atan2(b.x, b.z));
    out.labels.push_back(lb);
  }
  return out;
}

void write_dataset(const std::string& dir, std::uint64_t seed, int scenes, int min_objects,
                   int max_objects, const SynthConfig& cfg) {
  if (scenes < 0 || min_objects < 0 || max_objects < min_objects)
    fail(Error::Kind::Config, "write_dataset: bad scene/object counts");
  fs::create_directories(fs::path(dir) / "image_2");
  fs::create_directories(fs::path(dir) / "label_2");
  fs::create_directories(fs::path(dir) / "calib");
  fs::create_directories(fs::path(dir) / "depth");
  Rng rng(seed);
  for (int i = 0; i < scenes; ++i) {
    const int n = min_objects +
                  static_cast<int>(rng.next_below(
                      static_cast<std::uint64_t>(max_objects - min_objects + 1)));
    const Scene scene = generate_scene(seed + static_cast<std::uint64_t>(i) + 1, n, cfg);
    const Rendered r = render(scene);
    char name[16];
    std::snprintf(name, sizeof(name), "%06d", i);
    kitti::write_ppm((fs::path(dir) / "image_2" / (std::string(name) + ".ppm")).string(),
                     r.image, r.height, r.width);
    kitti::write_label_file(
        (fs::path(dir) / "label_2" / (std::string(name) + ".txt")).string(), r.labels);
    kitti::write_calib_file(
        (fs::path(dir) / "calib" / (std::string(name) + ".txt")).string(), scene.calib);
    kitti::write_depth((fs::path(dir) / "depth" / (std::string(name) + ".bin")).string(),
                       r.depth, r.height, r.width);
  }
}

}  // namespace auxdepth::synth
