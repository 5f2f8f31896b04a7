#pragma once

// Rotated-box geometry for evaluation: BEV footprints, convex polygon
// clipping, and the 3D IoU used by the KITTI protocol.

#include <array>
#include <vector>

#include <Eigen/Core>

#include "auxdepth/common.hpp"

namespace auxdepth {

/// 3D box in the KITTI camera frame (x right, y down, z forward).
/// (x, z) is the footprint center, y is the bottom face, so the box spans
/// [y - h, y] vertically. ry is the yaw about the y axis.
struct Box3D {
  double x = 0.0, y = 0.0, z = 0.0;
  double h = 0.0, w = 0.0, l = 0.0;
  double ry = 0.0;
};

using Vec2 = Eigen::Vector2d;

/// Wrap an angle to (-pi, pi].
inline double wrap_angle(double a) {
  while (a > 3.14159265358979323846) a -= 2.0 * 3.14159265358979323846;
  while (a <= -3.14159265358979323846) a += 2.0 * 3.14159265358979323846;
  return a;
}

/// Footprint corners in the (x, z) ground plane.
std::array<Vec2, 4> bev_corners(const Box3D& box);

/// True when the ground-plane point lies inside the box footprint.
bool bev_contains(const Box3D& box, double px, double pz);

/// Sutherland-Hodgman clip of a convex polygon by a convex polygon. Both
/// inputs are normalized to counter-clockwise winding internally.
std::vector<Vec2> clip_convex(std::vector<Vec2> subject, std::vector<Vec2> clip);

/// Shoelace area (absolute value).
double polygon_area(const std::vector<Vec2>& poly);

double bev_intersection(const Box3D& a, const Box3D& b);

/// Rotated-footprint IoU in the ground plane; 0 for degenerate boxes.
double iou_bev(const Box3D& a, const Box3D& b);

/// Volume IoU: BEV intersection area times vertical interval overlap.
double iou_3d(const Box3D& a, const Box3D& b);

}  // namespace auxdepth
