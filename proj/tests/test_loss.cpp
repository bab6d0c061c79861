#include <catch2/catch_amalgamated.hpp>

#include "gsup/loss.hpp"
#include "gsup/rng.hpp"

using namespace gsup;
using Catch::Approx;

namespace {

Image random_image(Rng& rng, int side) {
  Image img(side, side, 3);
  for (float& v : img.data) v = float(rng.uniform(0, 1));
  return img;
}

}  // namespace

TEST_CASE("loss of identical images is exactly zero") {
  Rng rng(21);
  const Image a = random_image(rng, 32);
  const LossResult r = compute_loss(a, a, LossWeights{});
  REQUIRE(r.total == 0.0);
  REQUIRE(r.mse_term == 0.0);
  REQUIRE(r.perceptual_term == 0.0);
  for (float g : r.dimage.data) REQUIRE(g == 0.0f);
}

TEST_CASE("uniform difference matches the closed-form value") {
  Rng rng(22);
  const Image b = random_image(rng, 32);
  Image a = b;
  for (float& v : a.data) v += 0.1f;
  LossWeights w;
  const LossResult r = compute_loss(a, b, w);
  REQUIRE(r.mse_term == Approx(0.01).epsilon(1e-4));

  // The projected-patch term has a closed form for a uniform difference:
  // every patch difference is 0.1 * ones at every scale, so each scale
  // contributes |P_s * 0.1 * 1|^2 / features.
  double want = 0;
  for (int s = 0; s < kLossScales; ++s) {
    const std::vector<float> proj = loss_projection(s);
    const int in_dim = kLossPatch * kLossPatch * 3;
    double scale_term = 0;
    for (int f = 0; f < kLossFeatures; ++f) {
      double acc = 0;
      for (int k = 0; k < in_dim; ++k)
        acc += 0.1 * double(proj[std::size_t(f) * in_dim + k]);
      scale_term += acc * acc;
    }
    want += scale_term / double(kLossFeatures);
  }
  want /= double(kLossScales);
  REQUIRE(r.perceptual_term == Approx(want).epsilon(1e-3));
  REQUIRE(r.total ==
          Approx(double(w.mse) * 0.01 + double(w.perceptual) * want)
              .epsilon(1e-3));
}

TEST_CASE("feature term is positive for any differing pair") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const Image a = random_image(rng, 16);
    const Image b = random_image(rng, 16);
    const LossResult r = compute_loss(a, b, LossWeights{});
    REQUIRE(r.perceptual_term > 0.0);
    REQUIRE(r.total > 0.0);
  }
}

TEST_CASE("loss gradients match finite differences in double precision") {
  Rng rng(24);
  const int side = 16;
  Plane<double> a(side, side, 3), b(side, side, 3);
  for (double& v : a.data) v = rng.uniform(0, 1);
  for (double& v : b.data) v = rng.uniform(0, 1);
  LossWeights w;
  w.mse = 0.7f;
  w.perceptual = 0.3f;
  const LossResultT<double> r = compute_loss(a, b, w);

  // Directional derivatives along 40 random single-pixel probes.
  const double eps = 1e-6;
  for (int probe = 0; probe < 40; ++probe) {
    const std::size_t i = std::size_t(rng.uniform_int(a.data.size()));
    const double orig = a.data[i];
    a.data[i] = orig + eps;
    const double lp = compute_loss(a, b, w).total;
    a.data[i] = orig - eps;
    const double lm = compute_loss(a, b, w).total;
    a.data[i] = orig;
    const double numeric = (lp - lm) / (2 * eps);
    REQUIRE(r.dimage.data[i] == Approx(numeric).epsilon(1e-4).margin(1e-10));
  }
}

TEST_CASE("loss rejects mismatched shapes and bad weights") {
  Image a(32, 32, 3), b(16, 16, 3);
  REQUIRE_THROWS_WITH(compute_loss(a, b, LossWeights{}),
                      Catch::Matchers::ContainsSubstring("32x32"));
  LossWeights w;
  w.mse = -1;
  Image c(32, 32, 3);
  REQUIRE_THROWS_WITH(compute_loss(a, c, w),
                      Catch::Matchers::ContainsSubstring("non-negative"));
}

TEST_CASE("different loss seeds change the feature term but not the MSE") {
  Rng rng(25);
  const Image a = random_image(rng, 16);
  const Image b = random_image(rng, 16);
  const LossResult r1 = compute_loss(a, b, LossWeights{}, 1);
  const LossResult r2 = compute_loss(a, b, LossWeights{}, 2);
  REQUIRE(r1.mse_term == r2.mse_term);
  REQUIRE(r1.perceptual_term != r2.perceptual_term);
}
