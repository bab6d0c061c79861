#pragma once
// Low-resolution per-pixel reconstruction. Each LR pixel becomes one
// Gaussian: its center is unprojected along the pixel ray to the supplied
// depth, its color is the pixel color, and a small learned head on top of a
// convolution-free patch-token encoder predicts opacity and an isotropic
// scale multiplier. The encoder's token grid doubles as the low-resolution
// prior handed to the cross-resolution refinement stage. The head and
// encoder are trained photometrically (re-rendering the LR view) in a
// separate phase and frozen afterwards.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gsup/camera.hpp"
#include "gsup/gaussian.hpp"
#include "gsup/image.hpp"
#include "gsup/network.hpp"
#include "gsup/params.hpp"
#include "gsup/rasterizer.hpp"
#include "gsup/tensor.hpp"

namespace gsup {

struct BackboneConfig {
  int patch = 4;    // token patch size over the LR image
  int embed = 64;   // token width; must match the mapping network width
  int heads = 4;
  int depth = 2;    // encoder blocks
  int mlp_ratio = 4;
  int head_hidden = 32;
  float alpha_logit_init = 1.5f;  // start mostly opaque (sigmoid ~0.82)
  float scale_clamp = 1.3862943611198906f;  // ln 4
  float base_scale_factor = 0.5f;  // half a pixel footprint at the depth

  void validate() const {
    if (patch < 1) throw Error("backbone patch size must be >= 1");
    if (embed < 1 || heads < 1 || embed % heads != 0)
      throw Error("backbone embed width must be a positive multiple of heads");
    if (depth < 1) throw Error("backbone depth must be >= 1");
    if (head_hidden < 1) throw Error("backbone head width must be >= 1");
  }
};

inline void register_backbone_params(ParamStore& store,
                                     const BackboneConfig& cfg, int tokens,
                                     int patch_dim) {
  cfg.validate();
  const int c = cfg.embed;
  auto lin = [&](const std::string& name, int out, int in) {
    store.trunc_normal(name + ".w", {out, in});
    store.zeros(name + ".b", {out});
  };
  lin("bb.embed", c, patch_dim);
  store.trunc_normal("bb.pos", {tokens, c});
  lin("bb.intr", c, 4);
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string p = "bb.enc" + std::to_string(i);
    for (const char* nm : {".attn.q", ".attn.k", ".attn.v", ".attn.o"})
      lin(p + nm, c, c);
    lin(p + ".mlp.0", c * cfg.mlp_ratio, c);
    lin(p + ".mlp.1", c, c * cfg.mlp_ratio);
  }
  lin("bb.head.0", cfg.head_hidden, c + 4);
  // Bias the opacity logit so freshly initialized Gaussians are visible;
  // applies only on first creation, never to loaded weights.
  const bool fresh = !store.has("bb.head.a.b");
  lin("bb.head.a", 1, cfg.head_hidden);
  lin("bb.head.s", 1, cfg.head_hidden);
  if (fresh) store.entry("bb.head.a.b").value[0] = cfg.alpha_logit_init;
}

/// Per-view constants the tape does not differentiate through.
struct BackboneView {
  int pixels = 0;
  int tokens = 0;
  int patch_dim = 0;
  std::vector<float> patches;     // tokens x patch_dim
  std::array<float, 4> intr{};    // normalized fx, fy, cx, cy
  std::vector<int> pixel_token;   // pixels -> token index
  std::vector<float> pixel_feat;  // pixels x 4: r, g, b, depth
  std::vector<Vec3<float>> mu;    // unprojected centers
  std::vector<Vec3<float>> rgb;
  std::vector<float> base_scale;  // pixels
};

inline BackboneView make_backbone_view(const Image& img, const Image& depth,
                                       const Camera& cam,
                                       const BackboneConfig& cfg) {
  cfg.validate();
  if (img.channels != 3)
    throw Error("backbone: expected a 3-channel input image");
  if (depth.width != img.width || depth.height != img.height ||
      depth.channels != 1)
    throw Error("backbone: depth map missing or misaligned with the image");
  if (img.width != cam.width || img.height != cam.height)
    throw Error("backbone: camera does not match the image size");

  BackboneView v;
  v.patches = extract_patches(img, cfg.patch);
  v.patch_dim = cfg.patch * cfg.patch * 3;
  v.tokens = int(v.patches.size() / std::size_t(v.patch_dim));
  v.intr = normalized_intrinsics(cam);
  v.pixels = img.width * img.height;
  const int tokens_per_row = img.width / cfg.patch;
  v.pixel_token.reserve(std::size_t(v.pixels));
  v.pixel_feat.reserve(std::size_t(v.pixels) * 4);
  v.mu.reserve(std::size_t(v.pixels));
  v.rgb.reserve(std::size_t(v.pixels));
  v.base_scale.reserve(std::size_t(v.pixels));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float z = depth.at(x, y, 0);
      if (!(z > 0.0f) || !std::isfinite(z))
        throw Error("backbone: depth must be positive and finite at pixel (" +
                    std::to_string(x) + ", " + std::to_string(y) + ")");
      v.pixel_token.push_back((y / cfg.patch) * tokens_per_row +
                              (x / cfg.patch));
      const Vec3<float> c{img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)};
      v.pixel_feat.insert(v.pixel_feat.end(), {c.x, c.y, c.z, z});
      v.mu.push_back(unproject(cam, float(x) + 0.5f, float(y) + 0.5f, z));
      v.rgb.push_back(c);
      v.base_scale.push_back(cfg.base_scale_factor * z / cam.fx);
    }
  return v;
}

template <class T>
struct BackboneForward {
  Tensor<T> tokens;  // tokens x embed: the low-resolution prior grid
  Tensor<T> alpha;   // pixels x 1
  Tensor<T> smult;   // pixels x 1, isotropic scale multiplier in [1/4, 4]
};

template <class T>
BackboneForward<T> backbone_forward(Graph<T>& g, ParamBinding<T>& P,
                                    const BackboneConfig& cfg,
                                    const BackboneView& v) {
  std::vector<T> patches(v.patches.begin(), v.patches.end());
  Tensor<T> x = g.linear(g.input({v.tokens, v.patch_dim}, patches, "patches"),
                         P("bb.embed.w"), P("bb.embed.b"));
  x = g.add(x, P("bb.pos"));
  std::vector<T> intr(v.intr.begin(), v.intr.end());
  Tensor<T> ie = g.linear(g.input({1, 4}, intr, "intrinsics"), P("bb.intr.w"),
                          P("bb.intr.b"));
  x = g.broadcast_add(x, g.reshape(ie, {cfg.embed}));
  for (int i = 0; i < cfg.depth; ++i)
    x = mapping_self_block(g, P, "bb.enc" + std::to_string(i), x, cfg.heads);

  Tensor<T> tok_px = g.gather_rows(x, v.pixel_token);
  std::vector<T> feat_data(v.pixel_feat.begin(), v.pixel_feat.end());
  Tensor<T> feat = g.concat(
      tok_px, g.input({v.pixels, 4}, feat_data, "pixel features"), 1);
  Tensor<T> h = g.gelu(g.linear(feat, P("bb.head.0.w"), P("bb.head.0.b")));

  BackboneForward<T> out;
  out.tokens = x;
  out.alpha = g.sigmoid(g.linear(h, P("bb.head.a.w"), P("bb.head.a.b")));
  out.smult = g.exp_op(
      g.clamp(g.linear(h, P("bb.head.s.w"), P("bb.head.s.b")),
              T(-cfg.scale_clamp), T(cfg.scale_clamp)));
  return out;
}

inline void append_backbone_gaussians(GaussianScene& scene,
                                      const BackboneView& v,
                                      const std::vector<float>& alpha,
                                      const std::vector<float>& smult) {
  for (int i = 0; i < v.pixels; ++i) {
    GaussianPrimitive p;
    p.mu = v.mu[std::size_t(i)];
    p.alpha = alpha[std::size_t(i)];
    p.rot = {1, 0, 0, 0};
    const float s = v.base_scale[std::size_t(i)] * smult[std::size_t(i)];
    p.scale = {s, s, s};
    p.sh = sh_from_rgb(v.rgb[std::size_t(i)]);
    scene.prims.push_back(p);
  }
}

struct BackboneReconstruction {
  GaussianScene scene;        // one Gaussian per LR pixel
  std::vector<float> tokens;  // token grid values, tokens x embed
  int token_count = 0;
};

/// Runs the frozen backbone on one view: per-pixel Gaussians plus the token
/// grid that seeds the cross-resolution refinement.
inline BackboneReconstruction backbone_reconstruct(ParamStore& store,
                                                   const BackboneConfig& cfg,
                                                   const Image& img,
                                                   const Image& depth,
                                                   const Camera& cam) {
  const BackboneView v = make_backbone_view(img, depth, cam, cfg);
  Graph<float> g;
  ParamBinding<float> P(g, store);
  const BackboneForward<float> fw = backbone_forward(g, P, cfg, v);
  BackboneReconstruction out;
  out.scene.sh_degree = 1;
  append_backbone_gaussians(out.scene, v, g.value(fw.alpha),
                            g.value(fw.smult));
  out.tokens = g.value(fw.tokens);
  out.token_count = v.tokens;
  return out;
}

/// One photometric pretraining step on a single LR view: re-render the
/// reconstruction from its own pose and descend the MSE against the input.
/// Returns the image-space MSE before the update.
inline double backbone_train_step(ParamStore& store, const BackboneConfig& cfg,
                                  const Image& img, const Image& depth,
                                  const Camera& cam, float lr,
                                  const RasterSettings& raster = {}) {
  const BackboneView v = make_backbone_view(img, depth, cam, cfg);
  Graph<float> g;
  ParamBinding<float> P(g, store);
  const BackboneForward<float> fw = backbone_forward(g, P, cfg, v);

  GaussianScene scene;
  scene.sh_degree = 1;
  append_backbone_gaussians(scene, v, g.value(fw.alpha), g.value(fw.smult));

  RenderTarget target;
  target.width = img.width;
  target.height = img.height;
  const Image rendered = render(scene, cam, target, raster);

  // MSE and its image-space partials.
  const std::size_t count = rendered.data.size();
  Plane<float> dimg(img.width, img.height, 3);
  double loss = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = double(rendered.data[i]) - double(img.data[i]);
    loss += d * d;
    dimg.data[i] = float(2.0 * d / double(count));
  }
  loss /= double(count);

  const SplatGradients grads =
      render_backward<float>(scene, cam, target, dimg, raster);

  // Bridge renderer partials onto the tape outputs. Scale is isotropic:
  // each axis is base * smult, so the multiplier gradient sums the axes.
  std::vector<float> dalpha(std::size_t(v.pixels));
  std::vector<float> dsmult(std::size_t(v.pixels));
  for (int i = 0; i < v.pixels; ++i) {
    dalpha[std::size_t(i)] = grads.dalpha[std::size_t(i)];
    const Vec3<float>& ds = grads.dscale[std::size_t(i)];
    dsmult[std::size_t(i)] =
        v.base_scale[std::size_t(i)] * (ds.x + ds.y + ds.z);
  }
  store.zero_grads();
  g.backward_seeded({{fw.alpha, dalpha}, {fw.smult, dsmult}});
  P.collect();
  store.adam_step(lr);
  return loss;
}

}  // namespace gsup
