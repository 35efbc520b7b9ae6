#include "lg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lg {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kAreaEps = 1e-12;  // degenerate-intersection cutoff
constexpr double kTiltTol = 1e-6;   // max roll/pitch for box transforms
}  // namespace

Quat Quat::from_yaw(double yaw) { return {std::cos(0.5 * yaw), 0.0, 0.0, std::sin(0.5 * yaw)}; }

Quat Quat::from_axis_angle(const Vec3& axis, double angle) {
  const double n = std::sqrt(axis.x * axis.x + axis.y * axis.y + axis.z * axis.z);
  if (n == 0.0) return identity();
  const double s = std::sin(0.5 * angle) / n;
  return {std::cos(0.5 * angle), axis.x * s, axis.y * s, axis.z * s};
}

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat Quat::normalized() const {
  const double n = norm();
  if (n == 0.0) throw ConfigError("cannot normalize a zero quaternion");
  return {w / n, x / n, y / n, z / n};
}

Quat Quat::operator*(const Quat& o) const {
  return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
          w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
}

Vec3 Quat::rotate(const Vec3& v) const {
  // v' = v + 2 q_v x (q_v x v + w v) for unit quaternions.
  const Vec3 qv{x, y, z};
  const Vec3 t{qv.y * v.z - qv.z * v.y + w * v.x, qv.z * v.x - qv.x * v.z + w * v.y,
               qv.x * v.y - qv.y * v.x + w * v.z};
  return {v.x + 2.0 * (qv.y * t.z - qv.z * t.y), v.y + 2.0 * (qv.z * t.x - qv.x * t.z),
          v.z + 2.0 * (qv.x * t.y - qv.y * t.x)};
}

double Quat::tilt() const {
  const Vec3 up = rotate({0.0, 0.0, 1.0});
  const double s = std::hypot(up.x, up.y);
  return std::asin(std::min(1.0, s));
}

double Quat::yaw() const {
  // atan2 of the rotated x-axis.
  const Vec3 fx = rotate({1.0, 0.0, 0.0});
  return std::atan2(fx.y, fx.x);
}

Pose Pose::inverse() const {
  const Quat qi = rotation.conjugate();
  const Vec3 ti = qi.rotate(translation);
  return {qi, {-ti.x, -ti.y, -ti.z}};
}

void Pose::validate() const {
  if (std::fabs(rotation.norm() - 1.0) > 1e-9) {
    throw ConfigError("pose rotation is not a unit quaternion (norm " +
                      std::to_string(rotation.norm()) + ")");
  }
}

Pose compose(const Pose& outer, const Pose& inner) {
  return {outer.rotation * inner.rotation, outer.apply(inner.translation)};
}

double normalize_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

void Box3D::validate() const {
  if (!(w > 0.0) || !(l > 0.0) || !(h > 0.0)) {
    throw ConfigError("box extents must be positive, got w=" + std::to_string(w) +
                      " l=" + std::to_string(l) + " h=" + std::to_string(h));
  }
}

double ConvexPolygon::area() const {
  if (vertices.size() < 3) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < vertices.size(); ++i) {
    const Point2& p = vertices[i];
    const Point2& q = vertices[(i + 1) % vertices.size()];
    acc += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::fabs(acc);
}

ConvexPolygon bev_corners(const Box3D& box) {
  box.validate();
  const double c = std::cos(box.alpha), s = std::sin(box.alpha);
  const double hl = 0.5 * box.l, hw = 0.5 * box.w;
  // l runs along the heading axis, w across it; CCW order.
  const double lx[4] = {hl, -hl, -hl, hl};
  const double ly[4] = {hw, hw, -hw, -hw};
  ConvexPolygon poly;
  poly.vertices.reserve(4);
  for (int i = 0; i < 4; ++i) {
    poly.vertices.push_back({box.u + c * lx[i] - s * ly[i], box.v + s * lx[i] + c * ly[i]});
  }
  return poly;
}

ConvexPolygon clip_convex(const ConvexPolygon& subject, const ConvexPolygon& clip) {
  std::vector<Point2> out = subject.vertices;
  for (size_t e = 0; e < clip.vertices.size() && !out.empty(); ++e) {
    const Point2& a = clip.vertices[e];
    const Point2& b = clip.vertices[(e + 1) % clip.vertices.size()];
    const double ex = b.x - a.x, ey = b.y - a.y;
    std::vector<Point2> in;
    in.swap(out);
    auto side = [&](const Point2& p) { return ex * (p.y - a.y) - ey * (p.x - a.x); };
    for (size_t i = 0; i < in.size(); ++i) {
      const Point2& p = in[i];
      const Point2& q = in[(i + 1) % in.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0.0) out.push_back(p);
      if ((sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return ConvexPolygon{std::move(out)};
}

double bev_iou(const Box3D& a, const Box3D& b) {
  const ConvexPolygon pa = bev_corners(a);
  const ConvexPolygon pb = bev_corners(b);
  double inter = clip_convex(pa, pb).area();
  if (inter < kAreaEps) inter = 0.0;
  const double ua = pa.area() + pb.area() - inter;
  if (ua <= 0.0) return 0.0;
  return std::clamp(inter / ua, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const ConvexPolygon pa = bev_corners(a);
  const ConvexPolygon pb = bev_corners(b);
  double inter_area = clip_convex(pa, pb).area();
  if (inter_area < kAreaEps) inter_area = 0.0;
  const double overlap = std::max(0.0, std::min(a.z_max(), b.z_max()) -
                                           std::max(a.z_min(), b.z_min()));
  const double inter = inter_area * overlap;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool bev_contains(const Box3D& box, double px, double py) {
  const double c = std::cos(box.alpha), s = std::sin(box.alpha);
  const double dx = px - box.u, dy = py - box.v;
  const double lx = c * dx + s * dy;   // along heading
  const double ly = -s * dx + c * dy;  // across
  return std::fabs(lx) <= 0.5 * box.l && std::fabs(ly) <= 0.5 * box.w;
}

Box3D transform_box(const Box3D& box, const Pose& pose) {
  box.validate();
  pose.validate();
  const double tilt = pose.rotation.tilt();
  if (tilt > kTiltTol) {
    throw ConfigError("transform_box: pose has roll/pitch of " + std::to_string(tilt) +
                      " rad; only yaw-only poses keep the box parameterization closed");
  }
  const Vec3 c = pose.apply({box.u, box.v, box.d});
  Box3D out = box;
  out.u = c.x;
  out.v = c.y;
  out.d = c.z;
  out.alpha = normalize_angle(box.alpha + pose.rotation.yaw());
  return out;
}

Box3D camera_to_lidar_chain(const Box3D& box, const Pose& cam_to_ego,
                            const Pose& ego_to_global_at_cam,
                            const Pose& global_to_ego_at_lidar, const Pose& ego_to_lidar) {
  Box3D out = transform_box(box, cam_to_ego);
  out = transform_box(out, ego_to_global_at_cam);
  out = transform_box(out, global_to_ego_at_lidar);
  out = transform_box(out, ego_to_lidar);
  return out;
}

std::optional<CameraModel::Projection> CameraModel::project(const Vec3& p_lidar) const {
  const Vec3 pc = lidar_to_cam.apply(p_lidar);
  if (pc.z <= 1e-9) return std::nullopt;
  const auto& k = intrinsics;
  return Projection{(k[0] * pc.x + k[1] * pc.y) / pc.z + k[2],
                    (k[4] * pc.y + k[3] * pc.x) / pc.z + k[5], pc.z};
}

}  // namespace lg
