#pragma once

#include <cmath>
#include <ostream>

namespace lmpvc {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Vec3&, const Vec3&) = default;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

// Unit quaternion, scalar first.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Quaternion&, const Quaternion&) = default;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  bool is_unit(double tolerance = 1e-9) const { return std::abs(norm() - 1.0) <= tolerance; }
  Quaternion normalized() const;
  Quaternion operator*(const Quaternion& o) const;

  static Quaternion from_yaw(double radians);
};

/// End-effector or object pose. Positions are in meters.
///
/// World frame: +x away from the robot base, "left" decreases y and "down"
/// decreases z. Rotation commands are yaw about +z; clockwise viewed from
/// above is negative yaw.
struct Pose {
  Vec3 position;
  Quaternion orientation;

  friend bool operator==(const Pose&, const Pose&) = default;
};

/// Yaw (rotation about world z) of `q`, in radians.
double yaw_of(const Quaternion& q);

/// Spherical interpolation, t in [0, 1].
Quaternion slerp(const Quaternion& a, const Quaternion& b, double t);

Pose interpolate(const Pose& a, const Pose& b, double t);

std::ostream& operator<<(std::ostream& os, const Vec3& v);
std::ostream& operator<<(std::ostream& os, const Pose& p);

}  // namespace lmpvc
