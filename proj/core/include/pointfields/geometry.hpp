// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <optional>

namespace pf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Unit quaternion (w, x, y, z), Hamilton convention. Rotating a vector v
/// by q computes q v q^-1.
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quat identity() { return {}; }
  static Quat from_axis_angle(const Vec3& axis, double angle_rad);
  static Quat from_rotation_matrix(const Mat3& r);

  double norm() const;
  Quat normalized() const;
  Quat conjugate() const { return {w, -x, -y, -z}; }
  // For unit quaternions the conjugate is the inverse.
  Quat inverse() const { return conjugate(); }
  Mat3 to_rotation_matrix() const;
  bool is_finite() const;

  /// Rotates v by this quaternion. Throws std::invalid_argument on
  /// non-finite input.
  Vec3 rotate(const Vec3& v) const;
};

/// Hamilton product a*b; the combined rotation applies b first, then a.
/// Result is renormalized. Throws std::invalid_argument on non-finite input.
Quat operator*(const Quat& a, const Quat& b);

inline Vec3 quat_rotate(const Quat& q, const Vec3& v) { return q.rotate(v); }
inline Quat quat_mul(const Quat& a, const Quat& b) { return a * b; }

/// Rigid transform: p_out = rotation * p + translation.
struct Pose {
  Quat rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }
  Pose inverse() const;
  Mat34 matrix34() const;
  static Pose from_matrix34(const Mat34& m);
};

/// Composition (a * b).apply(p) == a.apply(b.apply(p)).
Pose operator*(const Pose& a, const Pose& b);

/// SE(3) exponential map; xi packs (translational, rotational) parts.
Pose se3_exp(const Vec6& xi);
Vec6 se3_log(const Pose& t);

Mat3 skew(const Vec3& v);

/// Pinhole camera. Principal point must lie inside the image.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool valid() const;
};

/// Points closer than this camera-frame depth are culled from projection.
inline constexpr double kNearPlane = 0.05;

struct PixelDepth {
  Vec2 pixel;
  double depth = 0.0;
};

/// Projects a world point through pose_CW into the image. Returns nullopt
/// for points behind the near plane (the culled marker; not an error).
std::optional<PixelDepth> project(const CameraIntrinsics& intr,
                                  const Pose& pose_CW, const Vec3& p_W);

/// d(pixel)/d(p_C) of the pinhole projection at a camera-frame point.
/// Requires p_C.z() > kNearPlane.
Mat23 projection_jacobian(const CameraIntrinsics& intr, const Vec3& p_C);

/// Unit camera-frame direction of the ray through a pixel.
Vec3 pixel_ray_dir(const CameraIntrinsics& intr, const Vec2& pixel);

}  // namespace pf
