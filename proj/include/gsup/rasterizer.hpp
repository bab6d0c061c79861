// Differentiable tile-based splatting renderer.
//
// Forward: every Gaussian is projected with the EWA approximation (camera-frame
// covariance pushed through the projection Jacobian, plus a small isotropic
// dilation), binned into 16x16 pixel tiles, depth-sorted with a stable
// primitive-index tiebreak, and alpha-composited front to back with a
// transmittance early-out. Backward: analytic gradients for every Gaussian
// parameter (center, opacity, rotation, scale, SH coefficients), accumulated
// per tile and reduced in fixed tile order so results are reproducible for any
// thread count. Instantiate with T = double for finite-difference verification
// and T = float for training.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

#include "gsup/camera.hpp"
#include "gsup/gaussian.hpp"
#include "gsup/image.hpp"

namespace gsup {

struct RenderTarget {
  int width = 0, height = 0;
  Vec3<float> background{0, 0, 0};

  void validate() const {
    if (width < 1 || height < 1)
      throw Error("render target dimensions must be >= 1");
  }
};

/// Community-convention rasterization constants, all overridable.
struct RasterSettings {
  int tile_size = 16;
  double sigma_cutoff = 3.0;    // footprint radius in projected sigmas
  double dilation = 0.3;        // px^2 added to the projected covariance diagonal
  double t_stop = 1e-4;         // stop compositing when transmittance drops below
  double alpha_max = 0.999;     // per-sample opacity ceiling
  double alpha_skip = 1.0 / 255.0;  // ignore contributions below this opacity
  double far = 10.0;            // depth value where nothing is hit
  int max_radius = 64;          // footprint clamp in pixels
  int threads = 0;              // 0: GSUP_THREADS env var, else hardware

  /// Smooth, high-precision settings for gradient verification: wide
  /// footprints and negligible cutoffs keep the rendered function C^1 so
  /// central differences match the analytic gradients.
  static RasterSettings verification() {
    RasterSettings s;
    s.sigma_cutoff = 7.0;
    s.t_stop = 1e-9;
    s.alpha_skip = 0.0;
    s.max_radius = 4096;
    return s;
  }
};

inline int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GSUP_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

/// Loss partials with respect to every Gaussian parameter.
template <class T>
struct SplatGradientsT {
  std::vector<Vec3<T>> dmu;
  std::vector<T> dalpha;
  std::vector<std::array<T, 4>> drot;  // (w, x, y, z), through renormalization
  std::vector<Vec3<T>> dscale;
  std::vector<std::array<T, 12>> dsh;

  void assign_zero(std::size_t n) {
    dmu.assign(n, Vec3<T>{});
    dalpha.assign(n, T(0));
    drot.assign(n, std::array<T, 4>{});
    dscale.assign(n, Vec3<T>{});
    dsh.assign(n, std::array<T, 12>{});
  }
};

using SplatGradients = SplatGradientsT<float>;

/// Arbitrary-precision image plane used by the templated render paths.
template <class T>
struct Plane {
  int width = 0, height = 0, channels = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(int w, int h, int c, T fill = T(0))
      : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}
  T& at(int x, int y, int c) {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  T at(int x, int y, int c) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
};

inline Image plane_to_image(const Plane<float>& p) {
  Image img(p.width, p.height, p.channels);
  img.data = p.data;
  return img;
}

template <class T>
inline Plane<T> image_to_plane(const Image& img) {
  Plane<T> p(img.width, img.height, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) p.data[i] = T(img.data[i]);
  return p;
}

namespace rast {

// Projected per-primitive state shared by forward and backward.
template <class T>
struct ProjSplat {
  bool valid = false;
  T u = 0, v = 0;                  // projected center (pixels)
  T tx = 0, ty = 0, tz = 0;        // camera-frame center
  T conic[3] = {0, 0, 0};          // inverse 2D covariance (a, b, c)
  T A[3] = {0, 0, 0};              // 2D covariance (axx, axy, ayy)
  T M[6] = {0, 0, 0, 0, 0, 0};     // camera-frame 3D covariance (upper tri)
  T alpha = 0;
  T color[3] = {0, 0, 0};          // clamped SH color
  bool color_in_gamut[3] = {true, true, true};
  T dirx = 0, diry = 0, dirz = 0;  // unit view direction (camera -> center)
  T dir_len = 0;                   // ||mu - camera center||
  T qn[4] = {1, 0, 0, 0};          // normalized quaternion
  T qnorm = 1;                     // raw quaternion norm
  int radius = 0;
};

template <class T>
struct Frame {
  std::vector<ProjSplat<T>> splats;
  std::vector<int> order;                 // depth-sorted valid indices
  std::vector<std::vector<int>> tiles;    // per-tile index lists, depth order
  int tiles_x = 0, tiles_y = 0;
};

template <class T>
inline void project_all(const GaussianScene& scene, const Camera& cam,
                        const RenderTarget& target, const RasterSettings& cfg,
                        Frame<T>& frame) {
  const std::size_t n = scene.size();
  frame.splats.assign(n, ProjSplat<T>{});
  const Vec3<float> cam_center = cam.center();
  const T fx = T(cam.fx), fy = T(cam.fy), cx = T(cam.cx), cy = T(cam.cy);

  for (std::size_t i = 0; i < n; ++i) {
    const GaussianPrimitive& p = scene.prims[i];
    ProjSplat<T>& s = frame.splats[i];

    // Camera-frame center; behind-camera primitives are culled.
    T t[3];
    for (int r = 0; r < 3; ++r)
      t[r] = T(cam.R(r, 0)) * T(p.mu.x) + T(cam.R(r, 1)) * T(p.mu.y) +
             T(cam.R(r, 2)) * T(p.mu.z) + T(cam.t[r]);
    if (!(t[2] > T(1e-8))) continue;
    s.tx = t[0]; s.ty = t[1]; s.tz = t[2];
    s.u = fx * t[0] / t[2] + cx;
    s.v = fy * t[1] / t[2] + cy;

    // World covariance R diag(s^2) R^T, then camera frame, then EWA 2D.
    const T qn0 = T(p.rot.w), qn1 = T(p.rot.x), qn2 = T(p.rot.y), qn3 = T(p.rot.z);
    const T qnorm = std::sqrt(qn0 * qn0 + qn1 * qn1 + qn2 * qn2 + qn3 * qn3);
    if (!(qnorm > T(1e-12))) throw Error("degenerate rotation in primitive " +
                                         std::to_string(i));
    const T w = qn0 / qnorm, x = qn1 / qnorm, y = qn2 / qnorm, z = qn3 / qnorm;
    s.qn[0] = w; s.qn[1] = x; s.qn[2] = y; s.qn[3] = z;
    s.qnorm = qnorm;
    T R[3][3] = {
        {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
        {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
        {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
    const T s2[3] = {T(p.scale.x) * T(p.scale.x), T(p.scale.y) * T(p.scale.y),
                     T(p.scale.z) * T(p.scale.z)};
    // Sigma = R S^2 R^T.
    T Sigma[3][3];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        T acc = 0;
        for (int k = 0; k < 3; ++k) acc += R[r][k] * s2[k] * R[c][k];
        Sigma[r][c] = acc;
      }
    // M = Rcam Sigma Rcam^T.
    T RS[3][3];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        T acc = 0;
        for (int k = 0; k < 3; ++k) acc += T(cam.R(r, k)) * Sigma[k][c];
        RS[r][c] = acc;
      }
    T M[3][3];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        T acc = 0;
        for (int k = 0; k < 3; ++k) acc += RS[r][k] * T(cam.R(c, k));
        M[r][c] = acc;
      }
    s.M[0] = M[0][0]; s.M[1] = M[0][1]; s.M[2] = M[0][2];
    s.M[3] = M[1][1]; s.M[4] = M[1][2]; s.M[5] = M[2][2];

    // Projection Jacobian at the center.
    const T iz = T(1) / t[2];
    const T J[2][3] = {{fx * iz, 0, -fx * t[0] * iz * iz},
                       {0, fy * iz, -fy * t[1] * iz * iz}};
    T JM[2][3];
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 3; ++c)
        JM[r][c] = J[r][0] * M[0][c] + J[r][1] * M[1][c] + J[r][2] * M[2][c];
    T axx = JM[0][0] * J[0][0] + JM[0][1] * J[0][1] + JM[0][2] * J[0][2];
    T axy = JM[0][0] * J[1][0] + JM[0][1] * J[1][1] + JM[0][2] * J[1][2];
    T ayy = JM[1][0] * J[1][0] + JM[1][1] * J[1][1] + JM[1][2] * J[1][2];
    axx += T(cfg.dilation);
    ayy += T(cfg.dilation);
    const T det = axx * ayy - axy * axy;
    if (!(det > T(1e-18))) continue;
    s.A[0] = axx; s.A[1] = axy; s.A[2] = ayy;
    s.conic[0] = ayy / det;
    s.conic[1] = -axy / det;
    s.conic[2] = axx / det;

    // Footprint radius from the larger eigenvalue.
    const T mid = (axx + ayy) / 2;
    const T disc = std::sqrt(std::max(T(0), mid * mid - det));
    const T lam_max = mid + disc;
    int radius = int(std::ceil(double(T(cfg.sigma_cutoff) * std::sqrt(lam_max))));
    radius = std::min(radius, cfg.max_radius);
    if (radius < 1) radius = 1;
    s.radius = radius;

    // Cull footprints that miss the image entirely.
    if (s.u + T(radius) < T(0) || s.u - T(radius) > T(target.width - 1) ||
        s.v + T(radius) < T(0) || s.v - T(radius) > T(target.height - 1))
      continue;

    // View-dependent color, clamped to [0,1] with a gradient gate.
    Vec3<T> d{T(p.mu.x) - T(cam_center.x), T(p.mu.y) - T(cam_center.y),
              T(p.mu.z) - T(cam_center.z)};
    const T dlen = std::sqrt(dot(d, d));
    if (dlen > T(1e-12)) d = d / dlen; else d = {0, 0, 1};
    s.dirx = d.x; s.diry = d.y; s.dirz = d.z;
    s.dir_len = dlen;
    const Vec3<T> raw = evaluate_sh(p.sh, scene.sh_degree, d);
    for (int c = 0; c < 3; ++c) {
      const T rc = raw[c];
      s.color[c] = std::clamp(rc, T(0), T(1));
      s.color_in_gamut[c] = (rc > T(0) && rc < T(1));
    }
    s.alpha = T(p.alpha);
    s.valid = true;
  }
}

template <class T>
inline void build_tiles(const RenderTarget& target, const RasterSettings& cfg,
                        Frame<T>& frame) {
  const int ts = cfg.tile_size;
  frame.tiles_x = (target.width + ts - 1) / ts;
  frame.tiles_y = (target.height + ts - 1) / ts;

  // Depth sort with primitive-index tiebreak: storage-order independent.
  frame.order.clear();
  for (std::size_t i = 0; i < frame.splats.size(); ++i)
    if (frame.splats[i].valid) frame.order.push_back(int(i));
  std::sort(frame.order.begin(), frame.order.end(), [&](int a, int b) {
    if (frame.splats[a].tz != frame.splats[b].tz)
      return frame.splats[a].tz < frame.splats[b].tz;
    return a < b;
  });

  frame.tiles.assign(std::size_t(frame.tiles_x) * frame.tiles_y, {});
  for (int idx : frame.order) {
    const ProjSplat<T>& s = frame.splats[idx];
    const int x0 = std::max(0, int(std::floor(double(s.u) - s.radius)) / ts);
    const int y0 = std::max(0, int(std::floor(double(s.v) - s.radius)) / ts);
    const int x1 = std::min(frame.tiles_x - 1,
                            int(std::floor(double(s.u) + s.radius)) / ts);
    const int y1 = std::min(frame.tiles_y - 1,
                            int(std::floor(double(s.v) + s.radius)) / ts);
    for (int tyi = y0; tyi <= y1; ++tyi)
      for (int txi = x0; txi <= x1; ++txi)
        frame.tiles[std::size_t(tyi) * frame.tiles_x + txi].push_back(idx);
  }
}

template <class Fn>
inline void parallel_tiles(int tile_count, int threads, Fn&& fn) {
  if (threads <= 1 || tile_count <= 1) {
    for (int t = 0; t < tile_count; ++t) fn(t);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t stride = std::size_t((tile_count + threads - 1) / threads);
  for (int w = 0; w < threads; ++w) {
    const std::size_t lo = w * stride;
    const std::size_t hi = std::min<std::size_t>(lo + stride, tile_count);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t t = lo; t < hi; ++t) fn(int(t));
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace rast

/// Forward rendering. `depth_out`, when non-null, receives the alpha-weighted
/// expected camera depth (same compositing weights, `far` where nothing hits).
template <class T>
inline Plane<T> render_plane(const GaussianScene& scene, const Camera& cam,
                             const RenderTarget& target,
                             const RasterSettings& cfg = {},
                             Plane<T>* depth_out = nullptr) {
  target.validate();
  rast::Frame<T> frame;
  rast::project_all(scene, cam, target, cfg, frame);
  rast::build_tiles(target, cfg, frame);

  Plane<T> img(target.width, target.height, 3);
  if (depth_out) *depth_out = Plane<T>(target.width, target.height, 1);
  const T bg[3] = {T(target.background.x), T(target.background.y),
                   T(target.background.z)};
  const int ts = cfg.tile_size;
  const int threads = resolve_thread_count(cfg.threads);

  rast::parallel_tiles(
      int(frame.tiles.size()), threads, [&](int tile) {
        const auto& list = frame.tiles[tile];
        const int tx = tile % frame.tiles_x, ty = tile / frame.tiles_x;
        const int px0 = tx * ts, py0 = ty * ts;
        const int px1 = std::min(px0 + ts, target.width);
        const int py1 = std::min(py0 + ts, target.height);
        for (int py = py0; py < py1; ++py)
          for (int px = px0; px < px1; ++px) {
            T trans = 1, c0 = 0, c1 = 0, c2 = 0, dacc = 0;
            for (int idx : list) {
              const rast::ProjSplat<T>& s = frame.splats[idx];
              const T dx = T(px) - s.u, dy = T(py) - s.v;
              if (std::abs(dx) > T(s.radius) || std::abs(dy) > T(s.radius))
                continue;
              const T sigma = T(0.5) * (s.conic[0] * dx * dx +
                                        s.conic[2] * dy * dy) +
                              s.conic[1] * dx * dy;
              if (sigma < T(0)) continue;
              const T g = std::exp(-sigma);
              T a = s.alpha * g;
              if (a > T(cfg.alpha_max)) a = T(cfg.alpha_max);
              if (!(a >= T(cfg.alpha_skip)) || a <= T(0)) continue;
              const T wgt = a * trans;
              c0 += s.color[0] * wgt;
              c1 += s.color[1] * wgt;
              c2 += s.color[2] * wgt;
              dacc += s.tz * wgt;
              trans *= (T(1) - a);
              if (trans < T(cfg.t_stop)) break;
            }
            img.at(px, py, 0) = c0 + bg[0] * trans;
            img.at(px, py, 1) = c1 + bg[1] * trans;
            img.at(px, py, 2) = c2 + bg[2] * trans;
            if (depth_out)
              depth_out->at(px, py, 0) = dacc + T(cfg.far) * trans;
          }
      });
  return img;
}

/// float32 convenience wrapper producing a displayable Image.
inline Image render(const GaussianScene& scene, const Camera& cam,
                    const RenderTarget& target, const RasterSettings& cfg = {}) {
  return plane_to_image(render_plane<float>(scene, cam, target, cfg));
}

inline Image render_depth(const GaussianScene& scene, const Camera& cam,
                          const RenderTarget& target,
                          const RasterSettings& cfg = {}) {
  Plane<float> depth;
  render_plane<float>(scene, cam, target, cfg, &depth);
  Image img(depth.width, depth.height, 1);
  img.data = depth.data;
  return img;
}

/// Analytic gradients of a scalar loss with upstream partials `dL_dimage`
/// (H x W x 3, matching a forward pass with identical inputs and settings).
template <class T>
inline SplatGradientsT<T> render_backward(const GaussianScene& scene,
                                          const Camera& cam,
                                          const RenderTarget& target,
                                          const Plane<T>& dL_dimage,
                                          const RasterSettings& cfg = {}) {
  target.validate();
  if (dL_dimage.width != target.width || dL_dimage.height != target.height ||
      dL_dimage.channels != 3)
    throw Error("render_backward: upstream gradient shape mismatch");

  rast::Frame<T> frame;
  rast::project_all(scene, cam, target, cfg, frame);
  rast::build_tiles(target, cfg, frame);

  const T bg[3] = {T(target.background.x), T(target.background.y),
                   T(target.background.z)};
  const int ts = cfg.tile_size;
  const int threads = resolve_thread_count(cfg.threads);

  // Per-tile accumulators over (du, dv, da, db, dc, dalpha_raw, dcol0..2),
  // indexed by position in the tile list; reduced in fixed tile order below.
  struct Acc {
    T du = 0, dv = 0, da = 0, db = 0, dc = 0, dal = 0, dcol[3] = {0, 0, 0};
  };
  std::vector<std::vector<Acc>> tile_acc(frame.tiles.size());

  rast::parallel_tiles(
      int(frame.tiles.size()), threads, [&](int tile) {
        const auto& list = frame.tiles[tile];
        if (list.empty()) return;
        tile_acc[tile].assign(list.size(), Acc{});
        auto& acc = tile_acc[tile];
        const int tx = tile % frame.tiles_x, ty = tile / frame.tiles_x;
        const int px0 = tx * ts, py0 = ty * ts;
        const int px1 = std::min(px0 + ts, target.width);
        const int py1 = std::min(py0 + ts, target.height);

        struct Contribution {
          int pos;          // index into the tile list
          T a, g, dx, dy, t_before;
          bool capped;
        };
        std::vector<Contribution> walk;
        walk.reserve(list.size());

        for (int py = py0; py < py1; ++py)
          for (int px = px0; px < px1; ++px) {
            const T dC[3] = {dL_dimage.at(px, py, 0), dL_dimage.at(px, py, 1),
                             dL_dimage.at(px, py, 2)};
            if (dC[0] == T(0) && dC[1] == T(0) && dC[2] == T(0)) continue;

            // Replay the forward walk, recording each composited sample.
            walk.clear();
            T trans = 1;
            for (std::size_t pos = 0; pos < list.size(); ++pos) {
              const rast::ProjSplat<T>& s = frame.splats[list[pos]];
              const T dx = T(px) - s.u, dy = T(py) - s.v;
              if (std::abs(dx) > T(s.radius) || std::abs(dy) > T(s.radius))
                continue;
              const T sigma = T(0.5) * (s.conic[0] * dx * dx +
                                        s.conic[2] * dy * dy) +
                              s.conic[1] * dx * dy;
              if (sigma < T(0)) continue;
              const T g = std::exp(-sigma);
              T a = s.alpha * g;
              const bool capped = a > T(cfg.alpha_max);
              if (capped) a = T(cfg.alpha_max);
              if (!(a >= T(cfg.alpha_skip)) || a <= T(0)) continue;
              walk.push_back({int(pos), a, g, dx, dy, trans, capped});
              trans *= (T(1) - a);
              if (trans < T(cfg.t_stop)) break;
            }

            // Suffix accumulation back to front; the background behaves like a
            // final sample weighted by the leftover transmittance.
            T suffix[3] = {bg[0] * trans, bg[1] * trans, bg[2] * trans};
            for (std::size_t k = walk.size(); k-- > 0;) {
              const Contribution& w = walk[k];
              const rast::ProjSplat<T>& s = frame.splats[list[w.pos]];
              Acc& slot = acc[w.pos];
              const T wgt = w.a * w.t_before;
              T d_a_eff = 0;
              for (int c = 0; c < 3; ++c) {
                slot.dcol[c] += dC[c] * wgt;
                d_a_eff += dC[c] * (s.color[c] * w.t_before -
                                    suffix[c] / (T(1) - w.a));
                suffix[c] += s.color[c] * wgt;
              }
              if (!w.capped) {
                slot.dal += d_a_eff * w.g;
                const T d_g = d_a_eff * s.alpha;
                const T d_sigma = -w.g * d_g;
                slot.da += d_sigma * T(0.5) * w.dx * w.dx;
                slot.db += d_sigma * w.dx * w.dy;
                slot.dc += d_sigma * T(0.5) * w.dy * w.dy;
                const T gx = s.conic[0] * w.dx + s.conic[1] * w.dy;
                const T gy = s.conic[1] * w.dx + s.conic[2] * w.dy;
                slot.du += -d_sigma * gx;
                slot.dv += -d_sigma * gy;
              }
            }
          }
      });

  // Fixed-order reduction into per-splat accumulators.
  const std::size_t n = scene.size();
  std::vector<Acc> total(n);
  for (std::size_t tile = 0; tile < frame.tiles.size(); ++tile) {
    if (tile_acc[tile].empty()) continue;
    const auto& list = frame.tiles[tile];
    for (std::size_t pos = 0; pos < list.size(); ++pos) {
      const Acc& a = tile_acc[tile][pos];
      Acc& t = total[list[pos]];
      t.du += a.du; t.dv += a.dv; t.da += a.da; t.db += a.db; t.dc += a.dc;
      t.dal += a.dal;
      for (int c = 0; c < 3; ++c) t.dcol[c] += a.dcol[c];
    }
  }

  // Per-splat chain rule back to the Gaussian parameters.
  SplatGradientsT<T> grads;
  grads.assign_zero(n);
  const T fx = T(cam.fx), fy = T(cam.fy);

  for (std::size_t i = 0; i < n; ++i) {
    const rast::ProjSplat<T>& s = frame.splats[i];
    if (!s.valid) continue;
    const Acc& a = total[i];
    const GaussianPrimitive& p = scene.prims[i];

    grads.dalpha[i] = a.dal;

    // Color path: SH coefficients and the view-direction contribution.
    T ddir[3] = {0, 0, 0};
    for (int c = 0; c < 3; ++c) {
      if (!s.color_in_gamut[c]) continue;
      const T dcol = a.dcol[c];
      grads.dsh[i][c * 4 + 0] += dcol * T(kSH_C0);
      if (scene.sh_degree >= 1) {
        grads.dsh[i][c * 4 + 1] += dcol * T(-kSH_C1) * s.diry;
        grads.dsh[i][c * 4 + 2] += dcol * T(kSH_C1) * s.dirz;
        grads.dsh[i][c * 4 + 3] += dcol * T(-kSH_C1) * s.dirx;
        ddir[1] += dcol * T(-kSH_C1) * T(p.sh[c * 4 + 1]);
        ddir[2] += dcol * T(kSH_C1) * T(p.sh[c * 4 + 2]);
        ddir[0] += dcol * T(-kSH_C1) * T(p.sh[c * 4 + 3]);
      }
    }
    // dir = v / ||v||  =>  d mu += (I - dir dir^T) / ||v|| * ddir.
    if (scene.sh_degree >= 1 && s.dir_len > T(1e-12)) {
      const T dirv[3] = {s.dirx, s.diry, s.dirz};
      const T dp = dirv[0] * ddir[0] + dirv[1] * ddir[1] + dirv[2] * ddir[2];
      for (int r = 0; r < 3; ++r)
        grads.dmu[i][r] += (ddir[r] - dirv[r] * dp) / s.dir_len;
    }

    // Conic -> 2D covariance A. With sigma = 0.5 d^T C d and C = A^{-1}:
    // dL/dA = -C G C for the symmetric G assembled from (da, db, dc).
    const T C00 = s.conic[0], C01 = s.conic[1], C11 = s.conic[2];
    const T G00 = a.da, G01 = a.db / 2, G11 = a.dc;
    // H = C G C (symmetric).
    const T CG00 = C00 * G00 + C01 * G01, CG01 = C00 * G01 + C01 * G11;
    const T CG10 = C01 * G00 + C11 * G01, CG11 = C01 * G01 + C11 * G11;
    const T dA00 = -(CG00 * C00 + CG01 * C01);
    const T dA01 = -(CG00 * C01 + CG01 * C11);
    const T dA11 = -(CG10 * C01 + CG11 * C11);

    // A = J M J^T + dilation I.
    const T iz = T(1) / s.tz;
    const T J[2][3] = {{fx * iz, 0, -fx * s.tx * iz * iz},
                       {0, fy * iz, -fy * s.ty * iz * iz}};
    const T Mfull[3][3] = {{s.M[0], s.M[1], s.M[2]},
                           {s.M[1], s.M[3], s.M[4]},
                           {s.M[2], s.M[4], s.M[5]}};
    const T GA[2][2] = {{dA00, dA01}, {dA01, dA11}};
    // dL/dM = J^T GA J.
    T dM[3][3];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        dM[r][c] = J[0][r] * (GA[0][0] * J[0][c] + GA[0][1] * J[1][c]) +
                   J[1][r] * (GA[1][0] * J[0][c] + GA[1][1] * J[1][c]);
    // dL/dJ = 2 GA J M.
    T JMt[2][3];
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 3; ++c)
        JMt[r][c] = J[r][0] * Mfull[0][c] + J[r][1] * Mfull[1][c] +
                    J[r][2] * Mfull[2][c];
    T dJ[2][3];
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 3; ++c)
        dJ[r][c] = 2 * (GA[r][0] * JMt[0][c] + GA[r][1] * JMt[1][c]);

    // dL/dSigma (world) = Rcam^T dM Rcam.
    T dSig[3][3];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        T acc2 = 0;
        for (int k = 0; k < 3; ++k)
          for (int l = 0; l < 3; ++l)
            acc2 += T(cam.R(k, r)) * dM[k][l] * T(cam.R(l, c));
        dSig[r][c] = acc2;
      }

    // Sigma = Rq S^2 Rq^T with S^2 = diag(scale^2).
    const T w = s.qn[0], x = s.qn[1], y = s.qn[2], z = s.qn[3];
    const T Rq[3][3] = {
        {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
        {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
        {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
    const T s2[3] = {T(p.scale.x) * T(p.scale.x), T(p.scale.y) * T(p.scale.y),
                     T(p.scale.z) * T(p.scale.z)};
    // dL/dRq = 2 dSig Rq S^2 (dSig symmetric).
    T dRq[3][3];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        T acc2 = 0;
        for (int k = 0; k < 3; ++k) acc2 += dSig[r][k] * Rq[k][c];
        dRq[r][c] = 2 * acc2 * s2[c];
      }
    // dL/dscale_k = 2 scale_k (Rq^T dSig Rq)_kk.
    for (int k = 0; k < 3; ++k) {
      T acc2 = 0;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) acc2 += Rq[r][k] * dSig[r][c] * Rq[c][k];
      grads.dscale[i][k] += 2 * T(p.scale[k]) * acc2;
    }
    // dL/d(normalized quaternion) via dR/dq at the unit quaternion.
    T dqh[4];
    dqh[0] = 2 * (-z * dRq[0][1] + y * dRq[0][2] + z * dRq[1][0] -
                  x * dRq[1][2] - y * dRq[2][0] + x * dRq[2][1]);
    dqh[1] = 2 * (y * dRq[0][1] + z * dRq[0][2] + y * dRq[1][0] -
                  2 * x * dRq[1][1] - w * dRq[1][2] + z * dRq[2][0] +
                  w * dRq[2][1] - 2 * x * dRq[2][2]);
    dqh[2] = 2 * (-2 * y * dRq[0][0] + x * dRq[0][1] + w * dRq[0][2] +
                  x * dRq[1][0] + z * dRq[1][2] - w * dRq[2][0] +
                  z * dRq[2][1] - 2 * y * dRq[2][2]);
    dqh[3] = 2 * (-2 * z * dRq[0][0] - w * dRq[0][1] + x * dRq[0][2] +
                  w * dRq[1][0] - 2 * z * dRq[1][1] + y * dRq[1][2] +
                  x * dRq[2][0] + y * dRq[2][1]);
    // Through the normalization q_hat = q / ||q||.
    const T qh[4] = {w, x, y, z};
    T dpq = 0;
    for (int k = 0; k < 4; ++k) dpq += qh[k] * dqh[k];
    for (int k = 0; k < 4; ++k)
      grads.drot[i][k] += (dqh[k] - qh[k] * dpq) / s.qnorm;

    // Mean path: pixel-space (du, dv) and the Jacobian's dependence on the
    // camera-frame center, then back to the world center.
    T dt[3] = {0, 0, 0};
    dt[0] += a.du * fx * iz;
    dt[1] += a.dv * fy * iz;
    dt[2] += -a.du * fx * s.tx * iz * iz - a.dv * fy * s.ty * iz * iz;
    dt[0] += dJ[0][2] * (-fx * iz * iz);
    dt[1] += dJ[1][2] * (-fy * iz * iz);
    dt[2] += dJ[0][0] * (-fx * iz * iz) + dJ[1][1] * (-fy * iz * iz) +
             dJ[0][2] * (2 * fx * s.tx * iz * iz * iz) +
             dJ[1][2] * (2 * fy * s.ty * iz * iz * iz);
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k)
        grads.dmu[i][r] += T(cam.R(k, r)) * dt[k];
  }
  return grads;
}

}  // namespace gsup
