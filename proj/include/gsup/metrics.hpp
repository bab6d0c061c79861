// Image quality metrics: PSNR and single-scale SSIM.
#pragma once

#include <cmath>
#include <vector>

#include "gsup/image.hpp"

namespace gsup {

inline double image_mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw Error("image_mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  return acc / double(a.data.size());
}

/// PSNR in dB for [0,1] images: 10*log10(1/MSE), capped at 100 dB when
/// MSE < 1e-10 (identical or nearly identical images).
inline double psnr(const Image& a, const Image& b) {
  const double mse = image_mse(a, b);
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), C1=(0.01)^2,
/// C2=(0.03)^2. Windows are renormalized at the borders so images smaller
/// than the window are still well-defined; the result is averaged over all
/// pixels and channels.
inline double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw Error("ssim: shape mismatch");
  constexpr int kRadius = 5;  // 11x11 window
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  double g[2 * kRadius + 1];
  for (int i = -kRadius; i <= kRadius; ++i)
    g[i + kRadius] = std::exp(-0.5 * double(i * i) / (1.5 * 1.5));

  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        double w_sum = 0, mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int dy = -kRadius; dy <= kRadius; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= a.height) continue;
          for (int dx = -kRadius; dx <= kRadius; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= a.width) continue;
            const double w = g[dy + kRadius] * g[dx + kRadius];
            const double va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
            w_sum += w;
            mu_a += w * va;
            mu_b += w * vb;
            aa += w * va * va;
            bb += w * vb * vb;
            ab += w * va * vb;
          }
        }
        mu_a /= w_sum; mu_b /= w_sum;
        const double var_a = aa / w_sum - mu_a * mu_a;
        const double var_b = bb / w_sum - mu_b * mu_b;
        const double cov = ab / w_sum - mu_a * mu_b;
        const double num = (2 * mu_a * mu_b + kC1) * (2 * cov + kC2);
        const double den =
            (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
        total += num / den;
        ++count;
      }
  return total / double(count);
}

}  // namespace gsup
