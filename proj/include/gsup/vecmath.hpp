// Small fixed-size vector / matrix / quaternion helpers used across the library.
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gsup {

/// Library-wide error type; every validation failure throws this with a
/// message naming the offending record/primitive where applicable.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

template <class T>
struct Vec3 {
  T x{}, y{}, z{};

  Vec3() = default;
  Vec3(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(T k) const { return {x * k, y * k, z * k}; }
  Vec3 operator/(T k) const { return {x / k, y / k, z / k}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  T operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

template <class T>
inline T dot(const Vec3<T>& a, const Vec3<T>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class T>
inline Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <class T>
inline T norm(const Vec3<T>& a) {
  return std::sqrt(dot(a, a));
}

template <class T>
inline Vec3<T> normalized(const Vec3<T>& a) {
  const T n = norm(a);
  if (n <= T(0)) throw Error("cannot normalize zero-length vector");
  return a / n;
}

/// Row-major 3x3 matrix.
template <class T>
struct Mat3 {
  std::array<T, 9> m{};  // m[r*3+c]

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }

  T& operator()(int r, int c) { return m[r * 3 + c]; }
  T operator()(int r, int c) const { return m[r * 3 + c]; }

  Vec3<T> operator*(const Vec3<T>& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        T s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  Vec3<T> col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
  Vec3<T> row(int r) const { return {m[r * 3], m[r * 3 + 1], m[r * 3 + 2]}; }
};

/// Unit quaternion stored as (w, x, y, z).
template <class T>
struct Quat {
  T w{1}, x{}, y{}, z{};

  Quat() = default;
  Quat(T w_, T x_, T y_, T z_) : w(w_), x(x_), y(y_), z(z_) {}

  T norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

/// Rotation matrix of a (possibly unnormalized) quaternion. The quaternion is
/// normalized internally; a near-zero norm is a degenerate rotation and throws.
template <class T>
inline Mat3<T> quat_to_rotation(const Quat<T>& q) {
  const T n = q.norm();
  if (!(n > T(1e-12))) throw Error("degenerate rotation: quaternion norm is zero");
  const T w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;
  Mat3<T> R;
  R.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
         2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  return R;
}

template <class T>
inline Quat<T> quat_normalized(const Quat<T>& q) {
  const T n = q.norm();
  if (!(n > T(1e-12))) throw Error("degenerate rotation: quaternion norm is zero");
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

}  // namespace gsup
