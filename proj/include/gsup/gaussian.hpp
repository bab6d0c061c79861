// Gaussian primitive and scene containers, plus spherical-harmonic color
// evaluation for view-dependent shading.
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "gsup/vecmath.hpp"

namespace gsup {

// Real SH basis constants for bands 0 and 1.
inline constexpr float kSH_C0 = 0.28209479177387814f;
inline constexpr float kSH_C1 = 0.4886025119029199f;

/// One anisotropic Gaussian primitive.
///
/// SH coefficients are stored channel-major with a fixed capacity for degree 1:
/// sh[ch*4 + 0] is the DC term of channel ch, sh[ch*4 + 1..3] are the band-1
/// coefficients (paired with basis functions ~y, ~z, ~x in that order). A
/// degree-0 scene simply leaves the band-1 slots at zero.
struct GaussianPrimitive {
  Vec3<float> mu;                 // center
  float alpha = 1.0f;             // opacity in [0, 1]
  Quat<float> rot;                // unit quaternion (w, x, y, z)
  Vec3<float> scale{1, 1, 1};     // per-axis standard deviations, > 0
  std::array<float, 12> sh{};     // SH color coefficients (see above)
};

struct GaussianScene {
  int sh_degree = 1;  // 0 or 1
  std::vector<GaussianPrimitive> prims;

  std::size_t size() const { return prims.size(); }
  int coeff_count() const { return 3 * (sh_degree + 1) * (sh_degree + 1); }
};

/// Number of SH coefficients per color channel for a degree.
inline int sh_coeffs_per_channel(int degree) { return (degree + 1) * (degree + 1); }

/// Evaluates the SH color of a primitive toward unit direction `dir`
/// (primitive -> camera convention is decided by the caller; the rasterizer
/// uses camera-to-primitive). No clamping is applied here.
template <class T>
inline Vec3<T> evaluate_sh(const std::array<float, 12>& sh, int degree,
                           const Vec3<T>& dir) {
  Vec3<T> rgb;
  for (int ch = 0; ch < 3; ++ch) {
    T v = T(kSH_C0) * T(sh[ch * 4 + 0]);
    if (degree >= 1) {
      v += T(-kSH_C1) * dir.y * T(sh[ch * 4 + 1]);
      v += T(kSH_C1) * dir.z * T(sh[ch * 4 + 2]);
      v += T(-kSH_C1) * dir.x * T(sh[ch * 4 + 3]);
    }
    rgb[ch] = v;
  }
  return rgb;
}

/// DC-only coefficients reproducing a flat RGB color under SH evaluation.
inline std::array<float, 12> sh_from_rgb(const Vec3<float>& rgb) {
  std::array<float, 12> sh{};
  sh[0] = rgb.x / kSH_C0;
  sh[4] = rgb.y / kSH_C0;
  sh[8] = rgb.z / kSH_C0;
  return sh;
}

/// Checks all scene invariants; throws naming the first offending primitive.
/// Rotations within float tolerance of unit length are renormalized in place.
inline void validate_scene(GaussianScene& scene) {
  if (scene.sh_degree < 0 || scene.sh_degree > 1)
    throw Error("scene sh_degree must be 0 or 1, got " +
                std::to_string(scene.sh_degree));
  for (std::size_t i = 0; i < scene.prims.size(); ++i) {
    GaussianPrimitive& p = scene.prims[i];
    const std::string at = "primitive " + std::to_string(i);
    for (int k = 0; k < 3; ++k) {
      if (!std::isfinite(p.mu[k])) throw Error(at + ": non-finite center");
      if (!(p.scale[k] > 0.0f) || !std::isfinite(p.scale[k]))
        throw Error(at + ": scale must be positive and finite");
    }
    if (!(p.alpha >= 0.0f && p.alpha <= 1.0f))
      throw Error(at + ": opacity must lie in [0, 1]");
    const float n = p.rot.norm();
    if (!(n > 1e-8f) || !std::isfinite(n))
      throw Error(at + ": degenerate rotation (zero-norm quaternion)");
    // Renormalize only when genuinely off the unit sphere so that re-saving
    // an already-valid file reproduces it byte for byte.
    if (std::fabs(n - 1.0f) > 1e-6f)
      p.rot = {p.rot.w / n, p.rot.x / n, p.rot.y / n, p.rot.z / n};
    for (float c : p.sh)
      if (!std::isfinite(c)) throw Error(at + ": non-finite SH coefficient");
  }
}

}  // namespace gsup
