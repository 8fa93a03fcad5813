#include "lmpvc/pose.hpp"

#include <algorithm>

namespace lmpvc {

Quaternion Quaternion::normalized() const {
  const double n = norm();
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::operator*(const Quaternion& o) const {
  return {
      w * o.w - x * o.x - y * o.y - z * o.z,
      w * o.x + x * o.w + y * o.z - z * o.y,
      w * o.y - x * o.z + y * o.w + z * o.x,
      w * o.z + x * o.y - y * o.x + z * o.w,
  };
}

Quaternion Quaternion::from_yaw(double radians) {
  return {std::cos(radians / 2.0), 0.0, 0.0, std::sin(radians / 2.0)};
}

double yaw_of(const Quaternion& q) {
  return std::atan2(2.0 * (q.w * q.z + q.x * q.y), 1.0 - 2.0 * (q.y * q.y + q.z * q.z));
}

Quaternion slerp(const Quaternion& a, const Quaternion& b_in, double t) {
  Quaternion b = b_in;
  double dot = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
  if (dot < 0.0) {
    b = {-b.w, -b.x, -b.y, -b.z};
    dot = -dot;
  }
  if (dot > 0.9995) {
    Quaternion r{a.w + t * (b.w - a.w), a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
                 a.z + t * (b.z - a.z)};
    return r.normalized();
  }
  const double theta = std::acos(std::clamp(dot, -1.0, 1.0));
  const double s = std::sin(theta);
  const double wa = std::sin((1.0 - t) * theta) / s;
  const double wb = std::sin(t * theta) / s;
  return Quaternion{wa * a.w + wb * b.w, wa * a.x + wb * b.x, wa * a.y + wb * b.y,
                    wa * a.z + wb * b.z}
      .normalized();
}

Pose interpolate(const Pose& a, const Pose& b, double t) {
  if (t >= 1.0) {
    return b;
  }
  return {a.position + (b.position - a.position) * t, slerp(a.orientation, b.orientation, t)};
}

std::ostream& operator<<(std::ostream& os, const Vec3& v) {
  return os << "(" << v.x << ", " << v.y << ", " << v.z << ")";
}

std::ostream& operator<<(std::ostream& os, const Pose& p) {
  return os << "Pose{" << p.position << ", q=(" << p.orientation.w << ", " << p.orientation.x
            << ", " << p.orientation.y << ", " << p.orientation.z << ")}";
}

}  // namespace lmpvc
