// Shuffle-split densification: every sufficiently opaque Gaussian is replaced
// by six sub-Gaussians pushed out along its principal axes, forming the dense
// scaffold that the offset network later refines.
#pragma once

#include <cstdint>
#include <fstream>
#include <vector>

#include "gsup/gaussian.hpp"

namespace gsup {

struct DensifyConfig {
  float beta = 0.5f;               // offset factor along each principal axis
  float opacity_threshold = 0.5f;  // only primitives above this are split
  float scale_shrink = 0.25f;      // factor applied to the offset-axis scale

  void validate() const {
    if (!(beta > 0)) throw Error("densify: beta must be positive");
    if (!(opacity_threshold >= 0 && opacity_threshold <= 1))
      throw Error("densify: opacity threshold must lie in [0, 1]");
    if (!(scale_shrink > 0 && scale_shrink <= 1))
      throw Error("densify: scale_shrink must lie in (0, 1]");
  }
};

struct DensifyResult {
  GaussianScene scene;
  std::vector<std::int32_t> parent_index;  // output -> input primitive
};

/// Splits each primitive with alpha > threshold into 6 sub-Gaussians with
/// centers mu + beta * R * (e_k ⊙ s) for e_k over +x,-x,+y,-y,+z,-z (that
/// output order, parent-major). Sub-Gaussians inherit rotation, opacity and
/// SH color; the offset-axis scale is multiplied by scale_shrink, the other
/// two axes are copied exactly. Below-threshold primitives pass through
/// unchanged (one output).
inline DensifyResult shuffle_split(const GaussianScene& in, const DensifyConfig& cfg) {
  cfg.validate();
  DensifyResult out;
  out.scene.sh_degree = in.sh_degree;

  std::size_t split_count = 0;
  for (const GaussianPrimitive& p : in.prims)
    if (p.alpha > cfg.opacity_threshold) ++split_count;
  out.scene.prims.reserve(split_count * 6 + (in.prims.size() - split_count));
  out.parent_index.reserve(out.scene.prims.capacity());

  for (std::size_t j = 0; j < in.prims.size(); ++j) {
    const GaussianPrimitive& p = in.prims[j];
    if (!(p.alpha > cfg.opacity_threshold)) {
      out.scene.prims.push_back(p);
      out.parent_index.push_back(std::int32_t(j));
      continue;
    }
    const Mat3<float> R = quat_to_rotation(p.rot);
    for (int axis = 0; axis < 3; ++axis) {
      const Vec3<float> dir = R.col(axis) * (cfg.beta * p.scale[axis]);
      for (int sign = 0; sign < 2; ++sign) {  // +axis then -axis
        GaussianPrimitive sub = p;
        sub.mu = (sign == 0) ? p.mu + dir : p.mu - dir;
        sub.scale[axis] = p.scale[axis] * cfg.scale_shrink;
        out.scene.prims.push_back(sub);
        out.parent_index.push_back(std::int32_t(j));
      }
    }
  }
  return out;
}

/// Sidecar format for parent indices: one integer per line.
inline void save_parent_index(const std::vector<std::int32_t>& idx,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  for (std::int32_t v : idx) out << v << '\n';
  if (!out) throw Error("write failed: " + path);
}

inline std::vector<std::int32_t> load_parent_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  std::vector<std::int32_t> idx;
  std::int64_t v;
  while (in >> v) idx.push_back(std::int32_t(v));
  return idx;
}

}  // namespace gsup
