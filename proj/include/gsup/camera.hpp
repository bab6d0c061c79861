// Pinhole camera model: center projection, pixel rays, LR intrinsics scaling,
// and the plain-text multi-view camera file format.
//
// Conventions: world-to-camera extrinsics (X_cam = R * X_world + t); pixel
// (0,0) is the center of the top-left pixel; depth is the camera-space z of
// the homogeneous projection.
#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gsup/vecmath.hpp"

namespace gsup {

struct Camera {
  float fx = 1, fy = 1, cx = 0, cy = 0;
  Mat3<float> R = Mat3<float>::identity();  // world -> camera
  Vec3<float> t;
  int width = 0, height = 0;

  Vec3<float> center() const {  // camera position in world space: -R^T t
    return R.transposed() * (t * -1.0f);
  }
};

inline void validate_camera(const Camera& cam, const std::string& at = "camera") {
  if (!(cam.fx > 0) || !(cam.fy > 0))
    throw Error(at + ": focal lengths must be positive");
  if (cam.width <= 0 || cam.height <= 0)
    throw Error(at + ": image dimensions must be positive");
  if (!(cam.cx >= 0 && cam.cx <= float(cam.width)) ||
      !(cam.cy >= 0 && cam.cy <= float(cam.height)))
    throw Error(at + ": principal point outside the image");
  // R orthonormal with det +1 within 1e-6.
  const Mat3<float> I = cam.R * cam.R.transposed();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      const float want = (r == c) ? 1.0f : 0.0f;
      if (std::fabs(I(r, c) - want) > 1e-5f)
        throw Error(at + ": rotation is not orthonormal");
    }
  const float det =
      cam.R(0, 0) * (cam.R(1, 1) * cam.R(2, 2) - cam.R(1, 2) * cam.R(2, 1)) -
      cam.R(0, 1) * (cam.R(1, 0) * cam.R(2, 2) - cam.R(1, 2) * cam.R(2, 0)) +
      cam.R(0, 2) * (cam.R(1, 0) * cam.R(2, 1) - cam.R(1, 1) * cam.R(2, 0));
  if (std::fabs(det - 1.0f) > 1e-5f)
    throw Error(at + ": rotation determinant is not +1");
}

struct Projection {
  float u, v;     // continuous pixel coordinates
  float depth;    // camera-space z
};

/// Non-throwing projection; empty when the point is at or behind the camera.
template <class T>
inline std::optional<Projection> try_project_center(const Camera& cam,
                                                    const Vec3<T>& mu) {
  Vec3<T> p;
  for (int r = 0; r < 3; ++r)
    p[r] = T(cam.R(r, 0)) * mu.x + T(cam.R(r, 1)) * mu.y +
           T(cam.R(r, 2)) * mu.z + T(cam.t[r]);
  if (!(p.z > T(1e-8))) return std::nullopt;
  return Projection{float(T(cam.fx) * p.x / p.z + T(cam.cx)),
                    float(T(cam.fy) * p.y / p.z + T(cam.cy)), float(p.z)};
}

/// Homogeneous pinhole projection of a world point; throws behind the camera.
inline Projection project_center(const Camera& cam, const Vec3<float>& mu) {
  auto p = try_project_center(cam, mu);
  if (!p) throw Error("behind-camera: point has non-positive depth");
  return *p;
}

struct Ray {
  Vec3<float> origin;
  Vec3<float> dir;  // unit length, world frame
};

/// World-frame view ray through a continuous pixel.
inline Ray pixel_ray(const Camera& cam, float u, float v) {
  const Vec3<float> d_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0f};
  const Vec3<float> d_world = cam.R.transposed() * d_cam;
  return {cam.center(), normalized(d_world)};
}

/// Inverse of project_center at a known depth.
inline Vec3<float> unproject(const Camera& cam, float u, float v, float depth) {
  const Vec3<float> p_cam{(u - cam.cx) / cam.fx * depth,
                          (v - cam.cy) / cam.fy * depth, depth};
  return cam.R.transposed() * (p_cam - cam.t);
}

/// Derives the camera of a downsampled image. With pixel centers at integer
/// coordinates, exact area downsampling by `factor` maps HR pixel u to LR
/// pixel (u+0.5)/factor - 0.5; focal lengths divide by the factor and the
/// principal point follows that affine map.
inline Camera scale_camera(const Camera& cam, int factor) {
  if (factor < 1 || cam.width % factor || cam.height % factor)
    throw Error("scale_camera: dimensions not divisible by factor");
  Camera out = cam;
  out.fx = cam.fx / float(factor);
  out.fy = cam.fy / float(factor);
  out.cx = (cam.cx + 0.5f) / float(factor) - 0.5f;
  out.cy = (cam.cy + 0.5f) / float(factor) - 0.5f;
  out.width = cam.width / factor;
  out.height = cam.height / factor;
  return out;
}

// Camera file: one text record per view, 18 whitespace-separated values:
// fx fy cx cy, row-major R (9), t (3), then width height as integers.

inline void save_cameras(const std::vector<Camera>& cams, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out.precision(9);
  for (const Camera& c : cams) {
    out << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy;
    for (int i = 0; i < 9; ++i) out << ' ' << c.R.m[i];
    for (int i = 0; i < 3; ++i) out << ' ' << c.t[i];
    out << ' ' << c.width << ' ' << c.height << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

inline std::vector<Camera> load_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  std::vector<Camera> cams;
  double v[16];
  int record = 0;
  while (true) {
    if (!(in >> v[0])) break;  // clean EOF before a record
    for (int i = 1; i < 16; ++i)
      if (!(in >> v[i]))
        throw Error(path + ": truncated camera record " + std::to_string(record));
    Camera c;
    c.fx = float(v[0]); c.fy = float(v[1]); c.cx = float(v[2]); c.cy = float(v[3]);
    for (int i = 0; i < 9; ++i) c.R.m[i] = float(v[4 + i]);
    for (int i = 0; i < 3; ++i) c.t[i] = float(v[13 + i]);
    if (!(in >> c.width >> c.height))
      throw Error(path + ": truncated camera record " + std::to_string(record));
    validate_camera(c, path + ": camera record " + std::to_string(record));
    cams.push_back(c);
    ++record;
  }
  return cams;
}

}  // namespace gsup
