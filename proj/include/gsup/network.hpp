#pragma once

/// The learned mapping from two low-resolution views to per-Gaussian residual
/// offsets over a densified scaffold:
///
///   patch-embedded encoder over the upsampled inputs
///   -> bidirectional cross-attention against the reconstruction-backbone
///      tokens of the same view (feature refinement)
///   -> cross-view decoder (self / cross / MLP blocks, exactly 2 views)
///   -> per-Gaussian feature lookup by projecting scaffold centers
///   -> neighborhood point-attention blocks over the scaffold
///   -> zero-initialized offset head
///   -> residual composition in constrained spaces (exact identity at zero).
///
/// All learned computation runs on the gradient tape; composition and its
/// backward are hand-written so renderer gradients can be chained into the
/// tape at the offset tensor.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gsup/camera.hpp"
#include "gsup/gaussian.hpp"
#include "gsup/params.hpp"
#include "gsup/rasterizer.hpp"
#include "gsup/tensor.hpp"

namespace gsup {

struct NetworkConfig {
  int patch = 16;           // encoder patch edge (HR pixels)
  int embed = 64;           // token width C
  int heads = 4;            // encoder/decoder heads
  int refine_heads = 1;     // refinement attention heads (d = C/heads)
  int enc_depth = 2;        // encoder blocks
  int dec_depth = 2;        // decoder blocks
  int enc_mlp_ratio = 4;
  int point_width = 32;     // point-block width
  int point_heads = 4;
  int point_depth = 2;      // number of point blocks
  int point_mlp_ratio = 2;
  int knn = 16;             // neighborhood size (self included)
  float scale_clamp = 1.3862943611198906f;  // ln 4: log-scale offset bound
  float pos_cap_factor = 2.0f;  // position cap = factor * median NN distance
  bool constrained_compose = true;  // false: raw additive composition

  void validate() const {
    if (patch < 1 || embed < 1 || enc_depth < 0 || dec_depth < 0 ||
        point_depth < 0 || point_width < 1 || knn < 1)
      throw Error("network configuration values must be positive");
    if (heads < 1 || embed % heads != 0)
      throw Error("embed width " + std::to_string(embed) +
                  " not divisible by " + std::to_string(heads) + " heads");
    if (refine_heads < 1 || embed % refine_heads != 0)
      throw Error("embed width not divisible by refinement heads");
    if (point_heads < 1 || point_width % point_heads != 0)
      throw Error("point width " + std::to_string(point_width) +
                  " not divisible by " + std::to_string(point_heads) +
                  " heads");
  }
};

/// Per-Gaussian raw offset record layout inside the (N x 23) head output.
struct OffsetLayout {
  static constexpr int kMu = 0;        // 3: position
  static constexpr int kAlpha = 3;     // 1: opacity logit shift
  static constexpr int kRot = 4;       // 4: quaternion additive
  static constexpr int kScale = 8;     // 3: log-scale shift
  static constexpr int kColor = 11;    // 12: SH additive
  static constexpr int kTotal = 23;
};

// ---------------------------------------------------------------------------
// Scaffold geometry pre-computation (constants with respect to the weights)
// ---------------------------------------------------------------------------

/// Sorted k-nearest-neighbor lists (self included, ties broken by index).
struct KnnResult {
  int k = 0;
  std::vector<int> indices;     // N*k, row i = neighbors of i, nearest first
  std::vector<float> relpos;    // N*k*3, mu[nbr] - mu[i]
  float median_nn_distance = 0;  // median distance to the nearest non-self
};

/// Exact k-NN via a uniform spatial grid; falls back to all points when
/// N <= k (so a single point's neighborhood is the point itself).
inline KnnResult build_knn(const std::vector<Vec3<float>>& mu, int k) {
  const int n = int(mu.size());
  if (n == 0) throw Error("k-NN over an empty point set");
  KnnResult out;
  out.k = std::min(k, n);
  out.indices.resize(std::size_t(n) * out.k);
  out.relpos.resize(std::size_t(n) * out.k * 3);

  // Grid cell size from the bounding box so cells hold a handful of points.
  Vec3<float> lo = mu[0], hi = mu[0];
  for (const auto& p : mu) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const float extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z, 1e-6f});
  const int cells = std::max(1, int(std::cbrt(double(n) / 4.0)));
  const float cell = extent / float(cells);
  auto cell_of = [&](const Vec3<float>& p) {
    auto clampc = [&](float v, float l) {
      return std::min(cells - 1, std::max(0, int((v - l) / cell)));
    };
    return std::array<int, 3>{clampc(p.x, lo.x), clampc(p.y, lo.y),
                              clampc(p.z, lo.z)};
  };
  std::vector<std::vector<int>> buckets(std::size_t(cells) * cells * cells);
  for (int i = 0; i < n; ++i) {
    const auto c = cell_of(mu[std::size_t(i)]);
    buckets[(std::size_t(c[0]) * cells + c[1]) * cells + c[2]].push_back(i);
  }

  std::vector<std::pair<float, int>> cand;
  std::vector<float> nn1(std::size_t(n), 0.0f);
  for (int i = 0; i < n; ++i) {
    const Vec3<float>& p = mu[std::size_t(i)];
    const auto c = cell_of(p);
    cand.clear();
    // Expand Chebyshev rings of cells.  Any point in an uncollected ring r
    // is at least (r-1)*cell away, so once the current k-th candidate is
    // closer than that bound nothing nearer remains outside.
    for (int ring = 0; ring < cells; ++ring) {
      if (int(cand.size()) >= out.k) {
        std::nth_element(cand.begin(), cand.begin() + (out.k - 1),
                         cand.end());
        const float kth = std::sqrt(cand[std::size_t(out.k) - 1].first);
        if (float(ring - 1) * cell >= kth) break;
      }
      for (int dx = -ring; dx <= ring; ++dx)
        for (int dy = -ring; dy <= ring; ++dy)
          for (int dz = -ring; dz <= ring; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
              continue;
            const int cx = c[0] + dx, cy = c[1] + dy, cz = c[2] + dz;
            if (cx < 0 || cy < 0 || cz < 0 || cx >= cells || cy >= cells ||
                cz >= cells)
              continue;
            for (int j : buckets[(std::size_t(cx) * cells + cy) * cells + cz]) {
              const Vec3<float> d = mu[std::size_t(j)] - p;
              cand.push_back({dot(d, d), j});
            }
          }
    }
    std::sort(cand.begin(), cand.end());  // (distance^2, index) ties by index
    for (int j = 0; j < out.k; ++j) {
      const int nj = cand[std::size_t(j)].second;
      out.indices[std::size_t(i) * out.k + j] = nj;
      const Vec3<float> d = mu[std::size_t(nj)] - p;
      out.relpos[(std::size_t(i) * out.k + j) * 3 + 0] = d.x;
      out.relpos[(std::size_t(i) * out.k + j) * 3 + 1] = d.y;
      out.relpos[(std::size_t(i) * out.k + j) * 3 + 2] = d.z;
    }
    nn1[std::size_t(i)] = out.k > 1 ? std::sqrt(cand[1].first) : 0.0f;
  }
  std::nth_element(nn1.begin(), nn1.begin() + n / 2, nn1.end());
  out.median_nn_distance = nn1[std::size_t(n) / 2];
  return out;
}

/// Token index for a projected point on a patch grid, or -1 when the point
/// is behind the camera or lands outside the image.
inline int token_index_for(const Camera& cam, const Vec3<float>& mu,
                           int patch) {
  const auto uv = try_project_center<float>(cam, mu);
  if (!uv) return -1;
  const int ix = int(std::floor(uv->u));
  const int iy = int(std::floor(uv->v));
  if (ix < 0 || iy < 0 || ix >= cam.width || iy >= cam.height) return -1;
  const int cols = cam.width / patch;
  return (iy / patch) * cols + (ix / patch);
}

// ---------------------------------------------------------------------------
// Constant (weight-independent) inputs prepared once per scene
// ---------------------------------------------------------------------------

/// Everything the mapping network consumes for one scene that does not
/// depend on the trainable weights, precomputed and reusable across steps.
struct MappingInputs {
  int tokens_per_view = 0;   // rows*cols of the encoder grid
  int patch_dim = 0;         // patch*patch*3
  // Per view: flattened patch matrix (tokens x patch_dim) of the upsampled
  // input, normalized intrinsics (fx/W, fy/H, cx/W, cy/H), and the frozen
  // backbone token grid (tokens x C).
  std::array<std::vector<float>, 2> patches;
  std::array<std::array<float, 4>, 2> intr;
  std::array<std::vector<float>, 2> backbone_tokens;
  // Per scaffold Gaussian: source view (0/1), encoder token index or -1,
  // normalized centers, neighbor structure.
  std::vector<int> view_of;
  std::vector<int> token_of;
  std::vector<float> mu_norm;  // N x 3
  KnnResult knn;
  float pos_cap = 0;  // composition position cap for this scene
};

/// Flatten an HR-sized image into non-overlapping patch rows (tokens x
/// patch*patch*3), row-major over the patch grid, pixels row-major within a
/// patch, channels innermost.
inline std::vector<float> extract_patches(const Image& img, int patch) {
  if (img.channels != 3) throw Error("patch extraction expects 3 channels");
  if (img.width % patch != 0 || img.height % patch != 0)
    throw Error("image " + std::to_string(img.width) + "x" +
                std::to_string(img.height) + " not divisible by patch " +
                std::to_string(patch));
  const int cols = img.width / patch, rows = img.height / patch;
  std::vector<float> out(std::size_t(rows) * cols * patch * patch * 3);
  std::size_t o = 0;
  for (int pr = 0; pr < rows; ++pr)
    for (int pc = 0; pc < cols; ++pc)
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int ch = 0; ch < 3; ++ch)
            out[o++] = img.at(pc * patch + x, pr * patch + y, ch);
  return out;
}

inline std::array<float, 4> normalized_intrinsics(const Camera& cam) {
  return {cam.fx / float(cam.width), cam.fy / float(cam.height),
          cam.cx / float(cam.width), cam.cy / float(cam.height)};
}

// ---------------------------------------------------------------------------
// Parameter registration
// ---------------------------------------------------------------------------

namespace detail {

inline void register_linear(ParamStore& s, const std::string& name, int out,
                            int in) {
  s.trunc_normal(name + ".w", {out, in});
  s.zeros(name + ".b", {out});
}

inline void register_attn(ParamStore& s, const std::string& p, int c) {
  register_linear(s, p + ".q", c, c);
  register_linear(s, p + ".k", c, c);
  register_linear(s, p + ".v", c, c);
  register_linear(s, p + ".o", c, c);
}

inline void register_mlp(ParamStore& s, const std::string& p, int c,
                         int ratio) {
  register_linear(s, p + ".0", c * ratio, c);
  register_linear(s, p + ".1", c, c * ratio);
}

}  // namespace detail

/// Create every mapping-network parameter (idempotent; shapes checked).
inline void register_mapping_params(ParamStore& s, const NetworkConfig& cfg,
                                    int tokens, int patch_dim) {
  cfg.validate();
  const int c = cfg.embed, cp = cfg.point_width;
  detail::register_linear(s, "map.embed", c, patch_dim);
  s.trunc_normal("map.pos", {tokens, c});
  detail::register_linear(s, "map.intr", c, 4);
  for (int i = 0; i < cfg.enc_depth; ++i) {
    detail::register_attn(s, "map.enc" + std::to_string(i) + ".attn", c);
    detail::register_mlp(s, "map.enc" + std::to_string(i) + ".mlp", c,
                         cfg.enc_mlp_ratio);
  }
  // Refinement: separate projections for the upsampled-token stream (o) and
  // the backbone-token stream (p), plus the fusion layer.
  detail::register_linear(s, "map.ref.qo", c, c);
  detail::register_linear(s, "map.ref.ko", c, c);
  detail::register_linear(s, "map.ref.vo", c, c);
  detail::register_linear(s, "map.ref.qp", c, c);
  detail::register_linear(s, "map.ref.kp", c, c);
  detail::register_linear(s, "map.ref.vp", c, c);
  detail::register_linear(s, "map.ref.fc", c, 2 * c);
  for (int i = 0; i < cfg.dec_depth; ++i) {
    detail::register_attn(s, "map.dec" + std::to_string(i) + ".self", c);
    detail::register_attn(s, "map.dec" + std::to_string(i) + ".cross", c);
    detail::register_mlp(s, "map.dec" + std::to_string(i) + ".mlp", c,
                         cfg.enc_mlp_ratio);
  }
  s.trunc_normal("map.oov", {1, c});  // out-of-view sentinel token
  detail::register_linear(s, "map.posmlp.0", c, 3);
  detail::register_linear(s, "map.posmlp.1", c, c);
  detail::register_linear(s, "map.pintr", c, 4);
  detail::register_linear(s, "map.fuse", cp, 3 * c);
  for (int i = 0; i < cfg.point_depth; ++i) {
    const std::string p = "map.pt" + std::to_string(i);
    detail::register_attn(s, p + ".attn", cp);
    detail::register_mlp(s, p + ".mlp", cp, cfg.point_mlp_ratio);
    detail::register_linear(s, p + ".bias.0", 16, 3);
    detail::register_linear(s, p + ".bias.1", cfg.point_heads, 16);
  }
  detail::register_linear(s, "map.head.0", cp, cp);
  // Zero-initialized final layer: offsets are exactly zero at initialization.
  s.zeros("map.head.1.w", {OffsetLayout::kTotal, cp});
  s.zeros("map.head.1.b", {OffsetLayout::kTotal});
}

// ---------------------------------------------------------------------------
// Forward stages (tape)
// ---------------------------------------------------------------------------

/// Ablation/runtime switches; everything on by default.
struct MappingSwitches {
  bool refine = true;        // off: decoder consumes the encoder tokens
  bool point_blocks = true;  // off: features go straight to the head
  bool offsets = false;      // off-switch handled by the caller (zero offsets)
};

template <class T>
Tensor<T> mapping_linear(Graph<T>& g, ParamBinding<T>& P,
                         const std::string& name, Tensor<T> x) {
  return g.linear(x, P(name + ".w"), P(name + ".b"));
}

template <class T>
Tensor<T> mapping_mlp(Graph<T>& g, ParamBinding<T>& P, const std::string& p,
                      Tensor<T> x) {
  return mapping_linear(g, P, p + ".1",
                        g.gelu(mapping_linear(g, P, p + ".0", x)));
}

template <class T>
Tensor<T> mapping_self_block(Graph<T>& g, ParamBinding<T>& P,
                             const std::string& p, Tensor<T> x, int heads) {
  Tensor<T> h = g.layer_norm(x);
  Tensor<T> a = g.scaled_dot_attention(
      mapping_linear(g, P, p + ".attn.q", h),
      mapping_linear(g, P, p + ".attn.k", h),
      mapping_linear(g, P, p + ".attn.v", h), heads);
  x = g.add(x, mapping_linear(g, P, p + ".attn.o", a));
  return g.add(x, mapping_mlp(g, P, p + ".mlp", g.layer_norm(x)));
}

/// Patch embedding + positional table + token-wise intrinsics conditioning,
/// then the self-attention encoder.  Returns the (tokens x C) grid.
template <class T>
Tensor<T> encode_view(Graph<T>& g, ParamBinding<T>& P,
                      const NetworkConfig& cfg, const MappingInputs& in,
                      int view) {
  std::vector<T> patches(in.patches[std::size_t(view)].begin(),
                         in.patches[std::size_t(view)].end());
  Tensor<T> x = g.input({in.tokens_per_view, in.patch_dim}, patches, "patches");
  x = mapping_linear(g, P, "map.embed", x);
  x = g.add(x, P("map.pos"));
  std::vector<T> iv(in.intr[std::size_t(view)].begin(),
                    in.intr[std::size_t(view)].end());
  Tensor<T> intr = mapping_linear(g, P, "map.intr",
                                  g.input({1, 4}, iv, "intrinsics"));
  x = g.broadcast_add(x, g.reshape(intr, {cfg.embed}));
  for (int i = 0; i < cfg.enc_depth; ++i)
    x = mapping_self_block(g, P, "map.enc" + std::to_string(i), x, cfg.heads);
  return x;
}

/// Bidirectional single-stream refinement between the upsampled-image tokens
/// and the frozen backbone tokens of the same view:
///   U_op = softmax(Q(t_en) K(t_pre)^T / sqrt(d)) V(t_pre)
///   U_po = softmax(Q(t_pre) K(t_en)^T / sqrt(d)) V(t_en)
///   out  = FC([U_op, U_po]) + t_en.
template <class T>
Tensor<T> refine_tokens(Graph<T>& g, ParamBinding<T>& P,
                        const NetworkConfig& cfg, Tensor<T> t_en,
                        Tensor<T> t_pre) {
  if (g.shape(t_en) != g.shape(t_pre))
    throw Error("refine: token grids differ: " + shape_str(g.shape(t_en)) +
                " vs " + shape_str(g.shape(t_pre)));
  Tensor<T> u_op = g.scaled_dot_attention(
      mapping_linear(g, P, "map.ref.qo", t_en),
      mapping_linear(g, P, "map.ref.kp", t_pre),
      mapping_linear(g, P, "map.ref.vp", t_pre), cfg.refine_heads);
  Tensor<T> u_po = g.scaled_dot_attention(
      mapping_linear(g, P, "map.ref.qp", t_pre),
      mapping_linear(g, P, "map.ref.ko", t_en),
      mapping_linear(g, P, "map.ref.vo", t_en), cfg.refine_heads);
  return g.add(mapping_linear(g, P, "map.ref.fc", g.concat(u_op, u_po, 1)),
               t_en);
}

/// Cross-view decoder: alternating intra-view self-attention, inter-view
/// cross-attention, and MLP blocks with shared weights between the 2 views.
template <class T>
std::array<Tensor<T>, 2> decode_views(Graph<T>& g, ParamBinding<T>& P,
                                      const NetworkConfig& cfg,
                                      std::array<Tensor<T>, 2> x) {
  for (int i = 0; i < cfg.dec_depth; ++i) {
    const std::string p = "map.dec" + std::to_string(i);
    for (int v = 0; v < 2; ++v) {
      Tensor<T> h = g.layer_norm(x[std::size_t(v)]);
      Tensor<T> a = g.scaled_dot_attention(
          mapping_linear(g, P, p + ".self.q", h),
          mapping_linear(g, P, p + ".self.k", h),
          mapping_linear(g, P, p + ".self.v", h), cfg.heads);
      x[std::size_t(v)] = g.add(x[std::size_t(v)],
                                mapping_linear(g, P, p + ".self.o", a));
    }
    std::array<Tensor<T>, 2> ln{g.layer_norm(x[0]), g.layer_norm(x[1])};
    for (int v = 0; v < 2; ++v) {
      Tensor<T> other = ln[std::size_t(1 - v)];
      Tensor<T> a = g.scaled_dot_attention(
          mapping_linear(g, P, p + ".cross.q", ln[std::size_t(v)]),
          mapping_linear(g, P, p + ".cross.k", other),
          mapping_linear(g, P, p + ".cross.v", other), cfg.heads);
      x[std::size_t(v)] = g.add(x[std::size_t(v)],
                                mapping_linear(g, P, p + ".cross.o", a));
    }
    for (int v = 0; v < 2; ++v)
      x[std::size_t(v)] =
          g.add(x[std::size_t(v)],
                mapping_mlp(g, P, p + ".mlp", g.layer_norm(x[std::size_t(v)])));
  }
  return x;
}

/// Full forward pass to the raw (N x 23) offset tensor.
template <class T>
Tensor<T> predict_offsets(Graph<T>& g, ParamBinding<T>& P,
                          const NetworkConfig& cfg, const MappingInputs& in,
                          const MappingSwitches& sw = {}) {
  cfg.validate();
  const int n = int(in.view_of.size());
  if (int(in.token_of.size()) != n || int(in.mu_norm.size()) != n * 3)
    throw Error("mapping inputs: per-Gaussian arrays disagree in length");

  // Token pathway.
  std::array<Tensor<T>, 2> toks;
  for (int v = 0; v < 2; ++v) {
    Tensor<T> t_en = encode_view(g, P, cfg, in, v);
    if (sw.refine) {
      std::vector<T> pre(in.backbone_tokens[std::size_t(v)].begin(),
                         in.backbone_tokens[std::size_t(v)].end());
      Tensor<T> t_pre = g.input({in.tokens_per_view, cfg.embed}, pre,
                                "backbone_tokens");
      toks[std::size_t(v)] = refine_tokens(g, P, cfg, t_en, t_pre);
    } else {
      toks[std::size_t(v)] = t_en;
    }
  }
  toks = decode_views(g, P, cfg, toks);

  // Per-Gaussian feature lookup: rows [view0 tokens | view1 tokens | OOV].
  Tensor<T> bank = g.concat(g.concat(toks[0], toks[1], 0), P("map.oov"), 0);
  std::vector<int> row(std::size_t(n), 0);
  for (int i = 0; i < n; ++i) {
    const int t = in.token_of[std::size_t(i)];
    row[std::size_t(i)] =
        t < 0 ? 2 * in.tokens_per_view
              : in.view_of[std::size_t(i)] * in.tokens_per_view + t;
  }
  Tensor<T> feat = g.gather_rows(bank, row);

  // Geometry pathway: position token fused with the feature and the source
  // view's intrinsics embedding.
  std::vector<T> mu(in.mu_norm.begin(), in.mu_norm.end());
  Tensor<T> pos = g.input({n, 3}, mu, "mu_norm");
  pos = mapping_linear(g, P, "map.posmlp.1",
                       g.gelu(mapping_linear(g, P, "map.posmlp.0", pos)));
  std::vector<T> intr2;
  for (int v = 0; v < 2; ++v)
    intr2.insert(intr2.end(), in.intr[std::size_t(v)].begin(),
                 in.intr[std::size_t(v)].end());
  Tensor<T> pintr = mapping_linear(g, P, "map.pintr",
                                   g.input({2, 4}, intr2, "intrinsics"));
  Tensor<T> x = mapping_linear(
      g, P, "map.fuse",
      g.concat(g.concat(pos, feat, 1), g.gather_rows(pintr, in.view_of), 1));

  if (sw.point_blocks) {
    const int kn = in.knn.k;
    if (int(in.knn.indices.size()) != n * kn)
      throw Error("mapping inputs: neighbor list does not match scene size");
    std::vector<T> rel(in.knn.relpos.begin(), in.knn.relpos.end());
    Tensor<T> relpos = g.input({n * kn, 3}, rel, "relpos");
    for (int i = 0; i < cfg.point_depth; ++i) {
      const std::string p = "map.pt" + std::to_string(i);
      Tensor<T> bias = mapping_linear(
          g, P, p + ".bias.1",
          g.gelu(mapping_linear(g, P, p + ".bias.0", relpos)));
      Tensor<T> h = g.layer_norm(x);
      Tensor<T> a = g.knn_attention(mapping_linear(g, P, p + ".attn.q", h),
                                    mapping_linear(g, P, p + ".attn.k", h),
                                    mapping_linear(g, P, p + ".attn.v", h),
                                    in.knn.indices, kn, cfg.point_heads, bias);
      x = g.add(x, mapping_linear(g, P, p + ".attn.o", a));
      x = g.add(x, mapping_mlp(g, P, p + ".mlp", g.layer_norm(x)));
    }
  }

  Tensor<T> h = g.gelu(mapping_linear(g, P, "map.head.0", g.layer_norm(x)));
  return mapping_linear(g, P, "map.head.1", h);
}

// ---------------------------------------------------------------------------
// Residual composition (plain code, hand-differentiated)
// ---------------------------------------------------------------------------

struct ComposeConfig {
  float pos_cap = 0.1f;      // world-space bound on the position shift
  float scale_clamp = 1.3862943611198906f;  // ln 4
  bool constrained = true;   // false: raw addition of every field
};

/// Apply per-Gaussian offsets to the scaffold.  Constrained mode keeps every
/// invariant for arbitrary finite offsets and reproduces the scaffold
/// bit-for-bit at zero offsets (exact-zero fast paths for the opacity and
/// rotation branches whose closed forms are only identities algebraically).
inline GaussianScene compose_offsets(const GaussianScene& scaffold,
                                     const std::vector<float>& offsets,
                                     const ComposeConfig& cfg) {
  const std::size_t n = scaffold.size();
  if (offsets.size() != n * OffsetLayout::kTotal)
    throw Error("compose: offset count " + std::to_string(offsets.size()) +
                " does not match scene (" + std::to_string(n) +
                " primitives)");
  GaussianScene out = scaffold;
  for (std::size_t i = 0; i < n; ++i) {
    const float* o = offsets.data() + i * OffsetLayout::kTotal;
    for (int j = 0; j < OffsetLayout::kTotal; ++j)
      if (!std::isfinite(o[j]))
        throw Error("compose: non-finite offset at primitive " +
                    std::to_string(i));
    GaussianPrimitive& p = out.prims[i];
    const float* om = o + OffsetLayout::kMu;
    const float oa = o[OffsetLayout::kAlpha];
    const float* orot = o + OffsetLayout::kRot;
    const float* os = o + OffsetLayout::kScale;
    const float* oc = o + OffsetLayout::kColor;
    if (!cfg.constrained) {
      p.mu = {p.mu.x + om[0], p.mu.y + om[1], p.mu.z + om[2]};
      p.alpha = std::min(1.0f, std::max(0.0f, p.alpha + oa));
      p.rot = quat_normalized(Quat<float>{p.rot.w + orot[0], p.rot.x + orot[1],
                                          p.rot.y + orot[2],
                                          p.rot.z + orot[3]});
      for (int a = 0; a < 3; ++a)
        p.scale[a] = std::max(1e-8f, p.scale[a] + os[a]);
      for (int j = 0; j < 12; ++j) p.sh[std::size_t(j)] += oc[j];
      continue;
    }
    // Position: bounded shift (tanh(0) = 0 keeps the identity exact).
    p.mu = {p.mu.x + cfg.pos_cap * std::tanh(om[0]),
            p.mu.y + cfg.pos_cap * std::tanh(om[1]),
            p.mu.z + cfg.pos_cap * std::tanh(om[2])};
    // Opacity: shift in logit space.  sigmoid(logit(a)) is only an identity
    // algebraically, so zero offsets keep the stored value untouched.
    if (oa != 0.0f) {
      const float a = std::min(1.0f - 1e-6f, std::max(1e-6f, p.alpha));
      p.alpha = 1.0f / (1.0f + std::exp(-(std::log(a / (1.0f - a)) + oa)));
    }
    // Rotation: additive then renormalize, skipped entirely at exact zero.
    if (orot[0] != 0.0f || orot[1] != 0.0f || orot[2] != 0.0f ||
        orot[3] != 0.0f) {
      p.rot = quat_normalized(Quat<float>{p.rot.w + orot[0], p.rot.x + orot[1],
                                          p.rot.y + orot[2],
                                          p.rot.z + orot[3]});
    }
    // Scale: bounded multiplicative update (exp(0) = 1 is exact).
    for (int a = 0; a < 3; ++a) {
      const float z = std::min(cfg.scale_clamp,
                               std::max(-cfg.scale_clamp, os[a]));
      p.scale[a] *= std::exp(z);
    }
    // Color: plain residual (x + 0 is exact).
    for (int j = 0; j < 12; ++j) p.sh[std::size_t(j)] += oc[j];
  }
  return out;
}

/// Chain renderer gradients (with respect to the composed scene) back to the
/// raw offset tensor.  Must be called with the same scaffold/offsets/config
/// as the matching compose_offsets.
inline std::vector<float> compose_backward(
    const GaussianScene& scaffold, const std::vector<float>& offsets,
    const ComposeConfig& cfg, const SplatGradientsT<float>& grads) {
  const std::size_t n = scaffold.size();
  if (offsets.size() != n * OffsetLayout::kTotal)
    throw Error("compose backward: offset count mismatch");
  std::vector<float> out(offsets.size(), 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    const float* o = offsets.data() + i * OffsetLayout::kTotal;
    float* d = out.data() + i * OffsetLayout::kTotal;
    const GaussianPrimitive& p = scaffold.prims[i];
    const float* om = o + OffsetLayout::kMu;
    const float oa = o[OffsetLayout::kAlpha];
    const float* orot = o + OffsetLayout::kRot;
    const float* os = o + OffsetLayout::kScale;
    if (!cfg.constrained) {
      for (int a = 0; a < 3; ++a)
        d[OffsetLayout::kMu + a] = grads.dmu[i][a];
      const float araw = p.alpha + oa;
      d[OffsetLayout::kAlpha] =
          (araw > 0.0f && araw < 1.0f) ? grads.dalpha[i] : 0.0f;
      // Additive quaternion through normalization.
      const Quat<float> q{p.rot.w + orot[0], p.rot.x + orot[1],
                          p.rot.y + orot[2], p.rot.z + orot[3]};
      const float qn = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y +
                                 q.z * q.z);
      const float qh[4] = {q.w / qn, q.x / qn, q.y / qn, q.z / qn};
      float dot = 0;
      for (int a = 0; a < 4; ++a) dot += grads.drot[i][std::size_t(a)] * qh[a];
      for (int a = 0; a < 4; ++a)
        d[OffsetLayout::kRot + a] =
            (grads.drot[i][std::size_t(a)] - dot * qh[a]) / qn;
      for (int a = 0; a < 3; ++a)
        d[OffsetLayout::kScale + a] =
            (p.scale[a] + os[a] > 1e-8f) ? grads.dscale[i][a] : 0.0f;
      for (int j = 0; j < 12; ++j)
        d[OffsetLayout::kColor + j] = grads.dsh[i][std::size_t(j)];
      continue;
    }
    // Position: d tanh = 1 - tanh^2.
    for (int a = 0; a < 3; ++a) {
      const float t = std::tanh(om[a]);
      d[OffsetLayout::kMu + a] =
          grads.dmu[i][a] * cfg.pos_cap * (1.0f - t * t);
    }
    // Opacity: derivative of sigmoid at (logit(a) + oa) equals a'(1 - a').
    {
      const float a = std::min(1.0f - 1e-6f, std::max(1e-6f, p.alpha));
      const float ap = 1.0f / (1.0f + std::exp(-(std::log(a / (1.0f - a)) +
                                                 oa)));
      d[OffsetLayout::kAlpha] = grads.dalpha[i] * ap * (1.0f - ap);
    }
    // Rotation: projection Jacobian of normalization at r + dr.
    {
      const Quat<float> q{p.rot.w + orot[0], p.rot.x + orot[1],
                          p.rot.y + orot[2], p.rot.z + orot[3]};
      const float qn = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y +
                                 q.z * q.z);
      const float qh[4] = {q.w / qn, q.x / qn, q.y / qn, q.z / qn};
      float dot = 0;
      for (int a = 0; a < 4; ++a) dot += grads.drot[i][std::size_t(a)] * qh[a];
      for (int a = 0; a < 4; ++a)
        d[OffsetLayout::kRot + a] =
            (grads.drot[i][std::size_t(a)] - dot * qh[a]) / qn;
    }
    // Scale: s' = s exp(clamp(z)); gradient gated outside the clamp.
    for (int a = 0; a < 3; ++a) {
      if (os[a] <= -cfg.scale_clamp || os[a] >= cfg.scale_clamp) {
        d[OffsetLayout::kScale + a] = 0.0f;
      } else {
        d[OffsetLayout::kScale + a] =
            grads.dscale[i][a] * p.scale[a] * std::exp(os[a]);
      }
    }
    for (int j = 0; j < 12; ++j)
      d[OffsetLayout::kColor + j] = grads.dsh[i][std::size_t(j)];
  }
  return out;
}

}  // namespace gsup
