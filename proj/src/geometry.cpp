#include "auxdepth/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace auxdepth {

namespace {

double signed_area(const std::vector<Vec2>& poly) {
  double acc = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    acc += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * acc;
}

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (b.x() - o.x()) * (a.y() - o.y());
}

Vec2 line_intersect(const Vec2& a, const Vec2& b, const Vec2& p, const Vec2& q) {
  const double s1 = cross(a, b, p);
  const double s2 = cross(a, b, q);
  // caller guarantees p and q straddle line ab, so s2 - s1 != 0
  const double t = s1 / (s1 - s2);
  return p + t * (q - p);
}

}  // namespace

std::array<Vec2, 4> bev_corners(const Box3D& box) {
  const double c = std::cos(box.ry);
  const double s = std::sin(box.ry);
  const double hl = 0.5 * box.l;
  const double hw = 0.5 * box.w;
  // local axes: +l along heading, +w lateral; yaw rotates x toward -z
  std::array<Vec2, 4> corners;
  const double dl[4] = {hl, hl, -hl, -hl};
  const double dw[4] = {hw, -hw, -hw, hw};
  for (int i = 0; i < 4; ++i)
    corners[static_cast<std::size_t>(i)] =
        Vec2(box.x + dl[i] * c + dw[i] * s, box.z - dl[i] * s + dw[i] * c);
  return corners;
}

bool bev_contains(const Box3D& box, double px, double pz) {
  const double c = std::cos(box.ry);
  const double s = std::sin(box.ry);
  const double dx = px - box.x;
  const double dz = pz - box.z;
  const double local_l = dx * c - dz * s;
  const double local_w = dx * s + dz * c;
  return std::abs(local_l) <= 0.5 * box.l && std::abs(local_w) <= 0.5 * box.w;
}

std::vector<Vec2> clip_convex(std::vector<Vec2> subject, std::vector<Vec2> clip) {
  if (signed_area(subject) < 0.0) std::reverse(subject.begin(), subject.end());
  if (signed_area(clip) < 0.0) std::reverse(clip.begin(), clip.end());
  constexpr double kEps = 1e-12;
  std::vector<Vec2> poly = std::move(subject);
  std::vector<Vec2> next;
  for (std::size_t e = 0; e < clip.size() && !poly.empty(); ++e) {
    const Vec2& c1 = clip[e];
    const Vec2& c2 = clip[(e + 1) % clip.size()];
    next.clear();
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& cur = poly[i];
      const Vec2& nxt = poly[(i + 1) % n];
      const bool cur_in = cross(c1, c2, cur) >= -kEps;
      const bool nxt_in = cross(c1, c2, nxt) >= -kEps;
      if (cur_in) next.push_back(cur);
      if (cur_in != nxt_in) next.push_back(line_intersect(c1, c2, cur, nxt));
    }
    poly = next;
  }
  return poly;
}

double polygon_area(const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return 0.0;
  return std::abs(signed_area(poly));
}

double bev_intersection(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const auto clipped = clip_convex(std::vector<Vec2>(ca.begin(), ca.end()),
                                   std::vector<Vec2>(cb.begin(), cb.end()));
  return polygon_area(clipped);
}

double iou_bev(const Box3D& a, const Box3D& b) {
  const double area_a = a.w * a.l;
  const double area_b = b.w * b.l;
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double inter = bev_intersection(a, b);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double vol_a = a.w * a.l * a.h;
  const double vol_b = b.w * b.l * b.h;
  if (vol_a <= 0.0 || vol_b <= 0.0) return 0.0;
  const double y_overlap = std::min(a.y, b.y) - std::max(a.y - a.h, b.y - b.h);
  if (y_overlap <= 0.0) return 0.0;
  const double inter = bev_intersection(a, b) * y_overlap;
  const double uni = vol_a + vol_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace auxdepth
