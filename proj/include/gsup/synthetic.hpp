#pragma once
// Procedural training scenes: a few textured primitive shapes (spheres,
// boxes, plane patches) sampled into surface-aligned Gaussians, viewed by a
// ring of inward-looking cameras. Spec plus seed fully determines the scene
// and every camera.

#include <cmath>
#include <string>
#include <vector>

#include "gsup/camera.hpp"
#include "gsup/gaussian.hpp"
#include "gsup/rng.hpp"
#include "gsup/vecmath.hpp"

namespace gsup {

struct SyntheticSceneSpec {
  std::uint64_t seed = 1;
  int min_gaussians = 200;
  int max_gaussians = 2000;
  int min_shapes = 2;
  int max_shapes = 5;
  int cameras = 6;
  float ring_radius = 2.2f;
  float ring_height = 0.7f;
  float lookat_jitter = 0.08f;
  int width = 256, height = 256;
  float focal = 274.0f;

  void validate() const {
    if (min_gaussians < 1 || max_gaussians < min_gaussians)
      throw Error("scene spec: invalid Gaussian count range");
    if (min_shapes < 1 || max_shapes < min_shapes)
      throw Error("scene spec: invalid shape count range");
    if (cameras < 4) throw Error("scene spec: at least 4 cameras required");
    if (width < 1 || height < 1 || focal <= 0)
      throw Error("scene spec: invalid image geometry");
    if (ring_radius <= 0) throw Error("scene spec: ring radius must be > 0");
  }
};

struct SyntheticScene {
  GaussianScene scene;
  std::vector<Camera> cameras;
};

namespace synth {

/// Quaternion rotating +z onto the (unit) direction n.
inline Quat<float> quat_from_normal(const Vec3<float>& n) {
  const Vec3<float> ez{0, 0, 1};
  const float c = dot(ez, n);
  if (c > 1.0f - 1e-6f) return {1, 0, 0, 0};
  if (c < -1.0f + 1e-6f) return {0, 1, 0, 0};  // 180 degrees about x
  const Vec3<float> axis = normalized(cross(ez, n));
  const float half = 0.5f * std::acos(std::max(-1.0f, std::min(1.0f, c)));
  const float s = std::sin(half);
  return {std::cos(half), axis.x * s, axis.y * s, axis.z * s};
}

struct Shape {
  int kind = 0;  // 0 sphere, 1 box, 2 plane patch
  Vec3<float> center;
  Vec3<float> extent;   // sphere: radius in x; box: half extents; plane: a, b
  Vec3<float> base_rgb;
  Vec3<float> tint;       // stripe modulation per channel
  Vec3<float> stripe_dir; // unit direction of the texture stripes
  float stripe_freq = 8.0f;
  float stripe_phase = 0.0f;
  float area = 1.0f;

  Vec3<float> color_at(const Vec3<float>& p) const {
    const float w =
        std::sin(stripe_freq * dot(p - center, stripe_dir) + stripe_phase);
    auto ch = [&](float base, float t) {
      return std::min(0.95f, std::max(0.05f, base + t * w));
    };
    return {ch(base_rgb.x, tint.x), ch(base_rgb.y, tint.y),
            ch(base_rgb.z, tint.z)};
  }
};

struct SurfaceSample {
  Vec3<float> p;
  Vec3<float> n;
};

inline SurfaceSample sample_shape(const Shape& s, Rng& rng) {
  SurfaceSample out;
  if (s.kind == 0) {  // sphere
    // Uniform direction via normalized Gaussian triple.
    Vec3<float> d{float(rng.normal()), float(rng.normal()),
                  float(rng.normal())};
    const float l = norm(d);
    d = l > 1e-6f ? Vec3<float>{d.x / l, d.y / l, d.z / l}
                  : Vec3<float>{0, 0, 1};
    out.p = s.center + d * s.extent.x;
    out.n = d;
  } else if (s.kind == 1) {  // axis-aligned box, face chosen by area
    const Vec3<float>& h = s.extent;
    const float ax = h.y * h.z, ay = h.x * h.z, az = h.x * h.y;
    float pick = float(rng.uniform(0, 2.0 * (ax + ay + az)));
    const float u = float(rng.uniform(-1, 1)), v = float(rng.uniform(-1, 1));
    auto face = [&](int axis, float sign) {
      Vec3<float> p = s.center, n{0, 0, 0};
      if (axis == 0) {
        p = p + Vec3<float>{sign * h.x, u * h.y, v * h.z};
        n.x = sign;
      } else if (axis == 1) {
        p = p + Vec3<float>{u * h.x, sign * h.y, v * h.z};
        n.y = sign;
      } else {
        p = p + Vec3<float>{u * h.x, v * h.y, sign * h.z};
        n.z = sign;
      }
      out.p = p;
      out.n = n;
    };
    if (pick < ax) face(0, 1.0f);
    else if (pick < 2 * ax) face(0, -1.0f);
    else if (pick < 2 * ax + ay) face(1, 1.0f);
    else if (pick < 2 * ax + 2 * ay) face(1, -1.0f);
    else if (pick < 2 * ax + 2 * ay + az) face(2, 1.0f);
    else face(2, -1.0f);
  } else {  // plane patch in the xy directions, facing +z, tilted later
    out.p = s.center + Vec3<float>{float(rng.uniform(-1, 1)) * s.extent.x,
                                   float(rng.uniform(-1, 1)) * s.extent.y, 0};
    out.n = {0, 0, 1};
  }
  return out;
}

inline float shape_area(const Shape& s) {
  if (s.kind == 0) return 4.0f * 3.14159265f * s.extent.x * s.extent.x;
  if (s.kind == 1) {
    const Vec3<float>& h = s.extent;
    return 8.0f * (h.x * h.y + h.y * h.z + h.x * h.z);
  }
  return 4.0f * s.extent.x * s.extent.y;
}

}  // namespace synth

inline SyntheticScene generate_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  Rng rng(Rng::stream(spec.seed, "scene", 0));

  const int n_shapes =
      spec.min_shapes + int(rng.uniform_int(
                            std::uint64_t(spec.max_shapes - spec.min_shapes + 1)));
  std::vector<synth::Shape> shapes;
  float total_area = 0;
  for (int i = 0; i < n_shapes; ++i) {
    synth::Shape s;
    s.kind = int(rng.uniform_int(3));
    s.center = {float(rng.uniform(-0.45, 0.45)),
                float(rng.uniform(-0.45, 0.45)),
                float(rng.uniform(-0.45, 0.45))};
    if (s.kind == 0) {
      const float r = float(rng.uniform(0.15, 0.4));
      s.extent = {r, r, r};
    } else {
      s.extent = {float(rng.uniform(0.12, 0.35)),
                  float(rng.uniform(0.12, 0.35)),
                  float(rng.uniform(0.12, 0.35))};
    }
    s.base_rgb = {float(rng.uniform(0.25, 0.75)),
                  float(rng.uniform(0.25, 0.75)),
                  float(rng.uniform(0.25, 0.75))};
    s.tint = {float(rng.uniform(0.1, 0.3)), float(rng.uniform(0.1, 0.3)),
              float(rng.uniform(0.1, 0.3))};
    Vec3<float> d{float(rng.normal()), float(rng.normal()),
                  float(rng.normal())};
    const float l = norm(d);
    s.stripe_dir = l > 1e-6f ? Vec3<float>{d.x / l, d.y / l, d.z / l}
                             : Vec3<float>{1, 0, 0};
    s.stripe_freq = float(rng.uniform(5, 14));
    s.stripe_phase = float(rng.uniform(0, 6.283185));
    s.area = synth::shape_area(s);
    total_area += s.area;
    shapes.push_back(s);
  }

  const int n_total =
      spec.min_gaussians +
      int(rng.uniform_int(
          std::uint64_t(spec.max_gaussians - spec.min_gaussians + 1)));

  SyntheticScene out;
  out.scene.sh_degree = 1;
  for (int si = 0; si < n_shapes; ++si) {
    const synth::Shape& s = shapes[std::size_t(si)];
    int count = std::max(1, int(std::lround(double(n_total) * double(s.area) /
                                            double(total_area))));
    if (si == n_shapes - 1)
      count = std::max(1, n_total - int(out.scene.prims.size()));
    const float spacing = std::sqrt(s.area / float(count));
    for (int i = 0; i < count; ++i) {
      const synth::SurfaceSample smp = synth::sample_shape(s, rng);
      GaussianPrimitive p;
      p.mu = smp.p;
      p.alpha = float(rng.uniform(0.75, 0.98));
      p.rot = synth::quat_from_normal(smp.n);
      const float tangent = 0.8f * spacing * float(rng.uniform(0.7, 1.3));
      p.scale = {tangent, tangent, std::max(1e-3f, 0.15f * tangent)};
      p.sh = sh_from_rgb(s.color_at(smp.p));
      // Mild view dependence in the first SH band.
      for (int ch = 0; ch < 3; ++ch)
        for (int b = 1; b < 4; ++b)
          p.sh[std::size_t(ch * 4 + b)] = float(rng.uniform(-0.06, 0.06));
      out.scene.prims.push_back(p);
    }
  }
  // Per-shape rounding can overshoot the drawn total by a few; trim so the
  // configured range is a hard bound.
  if (int(out.scene.prims.size()) > spec.max_gaussians)
    out.scene.prims.resize(std::size_t(spec.max_gaussians));

  // Inward-looking camera ring with jittered height and target.
  Rng crng(Rng::stream(spec.seed, "cameras", 0));
  for (int i = 0; i < spec.cameras; ++i) {
    const float theta = 6.2831853f * float(i) / float(spec.cameras) +
                        float(crng.uniform(-0.05, 0.05));
    const Vec3<float> eye{spec.ring_radius * std::cos(theta),
                          spec.ring_radius * std::sin(theta),
                          spec.ring_height + float(crng.uniform(-0.2, 0.2))};
    const Vec3<float> target{float(crng.uniform(-1, 1)) * spec.lookat_jitter,
                             float(crng.uniform(-1, 1)) * spec.lookat_jitter,
                             float(crng.uniform(-1, 1)) * spec.lookat_jitter};
    const Vec3<float> fwd = normalized(target - eye);
    const Vec3<float> up{0, 0, 1};
    const Vec3<float> right = normalized(cross(fwd, up));
    const Vec3<float> down = cross(fwd, right);
    Camera cam;
    cam.width = spec.width;
    cam.height = spec.height;
    cam.fx = cam.fy = spec.focal;
    cam.cx = 0.5f * float(spec.width) - 0.5f;
    cam.cy = 0.5f * float(spec.height) - 0.5f;
    cam.R.m = {right.x, right.y, right.z, down.x, down.y, down.z,
               fwd.x, fwd.y, fwd.z};
    cam.t = (cam.R * eye) * -1.0f;
    out.cameras.push_back(cam);
  }
  return out;
}

}  // namespace gsup
