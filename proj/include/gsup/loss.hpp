#pragma once
// Image-space training loss: pixel MSE plus a deterministic multi-scale
// feature term. The feature term projects non-overlapping 4x4 patches
// through a fixed random matrix at three dyadic scales and penalizes the
// feature-map MSE; it stands in for a pretrained perceptual distance while
// remaining fully seeded and dependency-free. Gradients with respect to the
// first image are returned alongside the value.

#include <cmath>
#include <string>
#include <vector>

#include "gsup/image.hpp"
#include "gsup/rasterizer.hpp"  // Plane
#include "gsup/rng.hpp"

namespace gsup {

constexpr std::uint64_t kLossSeed = 90210;
constexpr int kLossPatch = 4;
constexpr int kLossFeatures = 8;
constexpr int kLossScales = 3;

struct LossWeights {
  float mse = 1.0f;
  float perceptual = 0.05f;

  void validate() const {
    if (mse < 0 || perceptual < 0)
      throw Error("loss weights must be non-negative");
  }
};

/// Projection matrix for one scale, kLossFeatures x (patch*patch*3),
/// variance-normalized so feature magnitudes are comparable across scales.
inline std::vector<float> loss_projection(int scale_index,
                                          std::uint64_t seed = kLossSeed) {
  const int in_dim = kLossPatch * kLossPatch * 3;
  Rng rng(Rng::stream(seed, "loss/projection", std::uint64_t(scale_index)));
  std::vector<float> m(std::size_t(kLossFeatures) * in_dim, 0.0f);
  const float norm = 1.0f / std::sqrt(float(in_dim));
  for (float& v : m) v = float(rng.normal()) * norm;
  return m;
}

template <class T>
struct LossResultT {
  double total = 0;
  double mse_term = 0;        // unweighted
  double perceptual_term = 0; // unweighted
  Plane<T> dimage;            // d(total)/d(first image)
};

using LossResult = LossResultT<float>;

namespace lossdetail {

template <class T>
Plane<T> box_halve(const Plane<T>& src) {
  Plane<T> dst(src.width / 2, src.height / 2, src.channels);
  for (int y = 0; y < dst.height; ++y)
    for (int x = 0; x < dst.width; ++x)
      for (int c = 0; c < src.channels; ++c)
        dst.at(x, y, c) = (src.at(2 * x, 2 * y, c) + src.at(2 * x + 1, 2 * y, c) +
                           src.at(2 * x, 2 * y + 1, c) +
                           src.at(2 * x + 1, 2 * y + 1, c)) /
                          T(4);
  return dst;
}

/// Adjoint of box_halve: spread each coarse gradient over its 2x2 block.
template <class T>
Plane<T> box_halve_adjoint(const Plane<T>& g, int out_w, int out_h) {
  Plane<T> out(out_w, out_h, g.channels);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      for (int c = 0; c < g.channels; ++c)
        out.at(x, y, c) = g.at(x / 2, y / 2, c) / T(4);
  return out;
}

}  // namespace lossdetail

template <class T>
LossResultT<T> compute_loss(const Plane<T>& img, const Plane<T>& ref,
                            const LossWeights& w,
                            std::uint64_t seed = kLossSeed) {
  w.validate();
  if (img.width != ref.width || img.height != ref.height ||
      img.channels != ref.channels)
    throw Error("loss: image shapes differ (" + std::to_string(img.width) +
                "x" + std::to_string(img.height) + " vs " +
                std::to_string(ref.width) + "x" + std::to_string(ref.height) +
                ")");
  if (img.channels != 3) throw Error("loss: expected 3-channel images");
  const int min_side = kLossPatch << (kLossScales - 1);
  if (img.width % min_side || img.height % min_side)
    throw Error("loss: image sides must be multiples of " +
                std::to_string(min_side));

  LossResultT<T> out;
  out.dimage = Plane<T>(img.width, img.height, 3);

  // Pixel MSE and its gradient.
  const std::size_t n = img.data.size();
  double mse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(img.data[i]) - double(ref.data[i]);
    mse += d * d;
    out.dimage.data[i] = T(w.mse * 2.0 * d / double(n));
  }
  out.mse_term = mse / double(n);

  // Multi-scale projected-patch term.
  const int in_dim = kLossPatch * kLossPatch * 3;
  Plane<T> cur_a = img, cur_b = ref;
  double perc = 0;
  for (int s = 0; s < kLossScales; ++s) {
    if (s > 0) {
      cur_a = lossdetail::box_halve(cur_a);
      cur_b = lossdetail::box_halve(cur_b);
    }
    const std::vector<float> proj = loss_projection(s, seed);
    const int pw = cur_a.width / kLossPatch;
    const int ph = cur_a.height / kLossPatch;
    const std::size_t feat_count = std::size_t(pw) * ph * kLossFeatures;
    Plane<T> grad_scale(cur_a.width, cur_a.height, 3);
    double term = 0;
    const double coeff =
        double(w.perceptual) * 2.0 / (double(feat_count) * kLossScales);
    std::vector<T> patch(std::size_t(in_dim), T(0));
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px) {
        // Patch difference, pixels row-major with channels innermost.
        int e = 0;
        for (int y = 0; y < kLossPatch; ++y)
          for (int x = 0; x < kLossPatch; ++x)
            for (int c = 0; c < 3; ++c, ++e)
              patch[std::size_t(e)] =
                  cur_a.at(px * kLossPatch + x, py * kLossPatch + y, c) -
                  cur_b.at(px * kLossPatch + x, py * kLossPatch + y, c);
        for (int f = 0; f < kLossFeatures; ++f) {
          double acc = 0;
          for (int k = 0; k < in_dim; ++k)
            acc += double(proj[std::size_t(f) * in_dim + k]) *
                   double(patch[std::size_t(k)]);
          term += acc * acc;
          // Backpropagate this feature into the scale-space gradient.
          const double gf = coeff * acc;
          e = 0;
          for (int y = 0; y < kLossPatch; ++y)
            for (int x = 0; x < kLossPatch; ++x)
              for (int c = 0; c < 3; ++c, ++e)
                grad_scale.at(px * kLossPatch + x, py * kLossPatch + y, c) +=
                    T(gf * double(proj[std::size_t(f) * in_dim + e]));
        }
      }
    perc += term / double(feat_count);
    // Walk the gradient back up to full resolution through the box filters.
    for (int lvl = s; lvl > 0; --lvl)
      grad_scale = lossdetail::box_halve_adjoint(
          grad_scale, grad_scale.width * 2, grad_scale.height * 2);
    for (std::size_t i = 0; i < n; ++i)
      out.dimage.data[i] += grad_scale.data[i];
  }
  out.perceptual_term = perc / double(kLossScales);
  out.total = double(w.mse) * out.mse_term +
              double(w.perceptual) * out.perceptual_term;
  return out;
}

inline LossResult compute_loss(const Image& img, const Image& ref,
                               const LossWeights& w,
                               std::uint64_t seed = kLossSeed) {
  return compute_loss(image_to_plane<float>(img), image_to_plane<float>(ref),
                      w, seed);
}

}  // namespace gsup
