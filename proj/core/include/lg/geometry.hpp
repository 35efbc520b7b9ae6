#pragma once

#include <array>
#include <optional>
#include <vector>

#include "lg/errors.hpp"

namespace lg {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
};

// Unit quaternion (w, x, y, z).
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Quat identity() { return {}; }
  static Quat from_yaw(double yaw);
  static Quat from_axis_angle(const Vec3& axis, double angle);

  double norm() const;
  Quat normalized() const;
  Quat conjugate() const { return {w, -x, -y, -z}; }
  Quat operator*(const Quat& o) const;  // Hamilton product
  Vec3 rotate(const Vec3& v) const;

  // Angle between the rotated vertical axis and vertical; 0 for pure yaw.
  double tilt() const;
  // Heading about the vertical axis (valid for yaw-only rotations).
  double yaw() const;
};

// Rigid transform x -> rotation * x + translation.
struct Pose {
  Quat rotation;
  Vec3 translation;

  static Pose identity() { return {}; }
  static Pose from_yaw(double yaw, const Vec3& t) { return {Quat::from_yaw(yaw), t}; }

  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }
  Pose inverse() const;
  // Unit-norm rotation within 1e-9, else throws.
  void validate() const;
};

// compose(outer, inner) applies `inner` first: result(x) = outer(inner(x)).
Pose compose(const Pose& outer, const Pose& inner);

// Normalize an angle into (-pi, pi].
double normalize_angle(double a);

// Oriented 3D box: center (u, v) on the ground plane, vertical center d,
// extents (w lateral, l along heading, h vertical), yaw alpha.
struct Box3D {
  double u = 0.0, v = 0.0, d = 0.0;
  double w = 1.0, l = 1.0, h = 1.0;
  double alpha = 0.0;

  void validate() const;  // positive extents
  double volume() const { return w * l * h; }
  double z_min() const { return d - 0.5 * h; }
  double z_max() const { return d + 0.5 * h; }
  std::array<double, 7> as_array() const { return {u, v, d, w, l, h, alpha}; }
  static Box3D from_array(const std::array<double, 7>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
  }
};

struct Point2 {
  double x = 0.0, y = 0.0;
};

// Convex polygon, counter-clockwise.
struct ConvexPolygon {
  std::vector<Point2> vertices;
  double area() const;  // shoelace, >= 0 for CCW input
};

// Four CCW corners of the rotated (u, v, w, l, alpha) footprint.
ConvexPolygon bev_corners(const Box3D& box);

// Intersection of two convex CCW polygons (Sutherland-Hodgman).
ConvexPolygon clip_convex(const ConvexPolygon& subject, const ConvexPolygon& clip);

// Rotated intersection-over-union of the two footprints, in [0, 1].
double bev_iou(const Box3D& a, const Box3D& b);

// BEV intersection area x vertical overlap over the union of volumes.
double iou_3d(const Box3D& a, const Box3D& b);

// True when (px, py) lies inside the box footprint.
bool bev_contains(const Box3D& box, double px, double py);

// Rigid yaw-only transform of a box; poses with roll/pitch above 1e-6 rad
// cannot keep the 7-DoF parameterization closed and throw ConfigError.
Box3D transform_box(const Box3D& box, const Pose& pose);

// Annotation-frame box to LiDAR frame: camera->ego, ego->global at the
// camera timestamp, global->ego at the LiDAR timestamp, ego->LiDAR-top.
Box3D camera_to_lidar_chain(const Box3D& box, const Pose& cam_to_ego,
                            const Pose& ego_to_global_at_cam,
                            const Pose& global_to_ego_at_lidar, const Pose& ego_to_lidar);

// Pinhole camera: x right, y down, z forward in the camera frame.
struct CameraModel {
  std::array<double, 9> intrinsics{};  // row-major 3x3
  Pose lidar_to_cam;
  int width = 0, height = 0;

  struct Projection {
    double u = 0.0, v = 0.0, depth = 0.0;
  };
  // Pixel coordinates and depth; nullopt when the point is at or behind
  // the camera plane.
  std::optional<Projection> project(const Vec3& p_lidar) const;
  bool in_image(const Projection& p) const {
    return p.u >= 0.0 && p.u < width && p.v >= 0.0 && p.v < height;
  }
};

}  // namespace lg
