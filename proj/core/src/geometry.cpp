// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#include "pointfields/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace pf {

namespace {
bool finite3(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}
}  // namespace

bool Quat::is_finite() const {
  return std::isfinite(w) && std::isfinite(x) && std::isfinite(y) &&
         std::isfinite(z);
}

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat Quat::normalized() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("Quat::normalized: zero or non-finite norm");
  }
  return {w / n, x / n, y / n, z / n};
}

Quat Quat::from_axis_angle(const Vec3& axis, double angle_rad) {
  const double n = axis.norm();
  if (!(n > 0.0)) {
    return identity();
  }
  const double half = 0.5 * angle_rad;
  const double s = std::sin(half) / n;
  return {std::cos(half), axis.x() * s, axis.y() * s, axis.z() * s};
}

Mat3 Quat::to_rotation_matrix() const {
  Mat3 r;
  const double xx = x * x, yy = y * y, zz = z * z;
  const double xy = x * y, xz = x * z, yz = y * z;
  const double wx = w * x, wy = w * y, wz = w * z;
  r << 1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),  //
      2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),   //
      2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy);
  return r;
}

Quat Quat::from_rotation_matrix(const Mat3& r) {
  // Shepperd's method: pick the largest diagonal combination for stability.
  Quat q;
  const double tr = r.trace();
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (r(2, 1) - r(1, 2)) / s;
    q.y = (r(0, 2) - r(2, 0)) / s;
    q.z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q.w = (r(2, 1) - r(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (r(0, 1) + r(1, 0)) / s;
    q.z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q.w = (r(0, 2) - r(2, 0)) / s;
    q.x = (r(0, 1) + r(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (r(1, 2) + r(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q.w = (r(1, 0) - r(0, 1)) / s;
    q.x = (r(0, 2) + r(2, 0)) / s;
    q.y = (r(1, 2) + r(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q.normalized();
}

Vec3 Quat::rotate(const Vec3& v) const {
  if (!is_finite() || !finite3(v)) {
    throw std::invalid_argument("quat_rotate: non-finite input");
  }
  // q v q^-1 expanded as v + 2w(u x v) + 2u x (u x v) with u = (x,y,z).
  const Vec3 u(x, y, z);
  const Vec3 uv = u.cross(v);
  return v + 2.0 * (w * uv + u.cross(uv));
}

Quat operator*(const Quat& a, const Quat& b) {
  if (!a.is_finite() || !b.is_finite()) {
    throw std::invalid_argument("quat_mul: non-finite input");
  }
  Quat q{a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
         a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
         a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
         a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  // Renormalize after every composition to prevent drift.
  return q.normalized();
}

Pose Pose::inverse() const {
  const Quat qi = rotation.inverse();
  return {qi, -qi.rotate(translation)};
}

Pose operator*(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation};
}

Mat34 Pose::matrix34() const {
  Mat34 m;
  m.leftCols<3>() = rotation.to_rotation_matrix();
  m.col(3) = translation;
  return m;
}

Pose Pose::from_matrix34(const Mat34& m) {
  return {Quat::from_rotation_matrix(m.leftCols<3>()), m.col(3)};
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

Pose se3_exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 omega = xi.tail<3>();
  const double theta = omega.norm();
  Mat3 v;
  Quat q;
  if (theta < 1e-10) {
    v = Mat3::Identity() + 0.5 * skew(omega);
    q = Quat{1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z()}.normalized();
  } else {
    const Mat3 k = skew(omega);
    const double a = (1.0 - std::cos(theta)) / (theta * theta);
    const double b = (theta - std::sin(theta)) / (theta * theta * theta);
    v = Mat3::Identity() + a * k + b * (k * k);
    q = Quat::from_axis_angle(omega, theta);
  }
  return {q, v * rho};
}

Vec6 se3_log(const Pose& t) {
  const Mat3 r = t.rotation.to_rotation_matrix();
  const double cos_theta = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  Vec3 omega;
  if (theta < 1e-10) {
    omega = 0.5 * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  } else if (theta > M_PI - 1e-6) {
    // Near pi the off-diagonal formula degenerates; use the symmetric part.
    Mat3 b = 0.5 * (r + Mat3::Identity());
    Vec3 axis(std::sqrt(std::max(0.0, b(0, 0))), std::sqrt(std::max(0.0, b(1, 1))),
              std::sqrt(std::max(0.0, b(2, 2))));
    int k;
    axis.maxCoeff(&k);
    if (axis[k] > 0) {
      for (int i = 0; i < 3; ++i) {
        if (i != k) axis[i] = b(k, i) / axis[k] * (axis[i] < 0 ? -1.0 : 1.0);
      }
    }
    // Fix signs from the skew part where it is non-degenerate.
    Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    if (s.dot(axis) < 0) axis = -axis;
    omega = theta * axis.normalized();
  } else {
    const double f = theta / (2.0 * std::sin(theta));
    omega = f * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  }
  Mat3 v_inv;
  const double th = omega.norm();
  const Mat3 k = skew(omega);
  if (th < 1e-10) {
    v_inv = Mat3::Identity() - 0.5 * k;
  } else {
    const double half = 0.5 * th;
    const double cot = 1.0 / std::tan(half);
    const double a = (1.0 - half * cot) / (th * th);
    v_inv = Mat3::Identity() - 0.5 * k + a * (k * k);
  }
  Vec6 xi;
  xi.head<3>() = v_inv * t.translation;
  xi.tail<3>() = omega;
  return xi;
}

bool CameraIntrinsics::valid() const {
  return fx > 0 && fy > 0 && width > 0 && height > 0 && cx > 0 &&
         cx < static_cast<double>(width) && cy > 0 &&
         cy < static_cast<double>(height);
}

std::optional<PixelDepth> project(const CameraIntrinsics& intr,
                                  const Pose& pose_CW, const Vec3& p_W) {
  const Vec3 p_C = pose_CW.apply(p_W);
  if (!(p_C.z() > kNearPlane)) {
    return std::nullopt;
  }
  return PixelDepth{Vec2(intr.fx * p_C.x() / p_C.z() + intr.cx,
                         intr.fy * p_C.y() / p_C.z() + intr.cy),
                    p_C.z()};
}

Mat23 projection_jacobian(const CameraIntrinsics& intr, const Vec3& p_C) {
  const double inv_z = 1.0 / p_C.z();
  Mat23 j;
  j << intr.fx * inv_z, 0.0, -intr.fx * p_C.x() * inv_z * inv_z,  //
      0.0, intr.fy * inv_z, -intr.fy * p_C.y() * inv_z * inv_z;
  return j;
}

Vec3 pixel_ray_dir(const CameraIntrinsics& intr, const Vec2& pixel) {
  return Vec3((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy,
              1.0)
      .normalized();
}

}  // namespace pf
