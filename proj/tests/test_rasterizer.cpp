#include <catch2/catch_amalgamated.hpp>

#include "gsup/rasterizer.hpp"
#include "gsup/rng.hpp"

using namespace gsup;

namespace {

Camera test_camera(int size = 16) {
  Camera cam;
  cam.fx = cam.fy = float(size);
  cam.cx = cam.cy = float(size - 1) / 2.0f;
  cam.width = cam.height = size;
  return cam;
}

GaussianPrimitive white_gaussian(Vec3<float> mu, float alpha, float scale) {
  GaussianPrimitive p;
  p.mu = mu;
  p.alpha = alpha;
  p.rot = {1, 0, 0, 0};
  p.scale = {scale, scale, scale};
  p.sh = sh_from_rgb({1, 1, 1});
  return p;
}

/// Random small scene with parameters kept inside the smooth region of the
/// renderer (no opacity cap, colors strictly inside the gamut).
GaussianScene random_scene(Rng& rng, int count, int sh_degree) {
  GaussianScene scene;
  scene.sh_degree = sh_degree;
  for (int i = 0; i < count; ++i) {
    GaussianPrimitive p;
    p.mu = {float(rng.uniform(-0.45, 0.45)), float(rng.uniform(-0.45, 0.45)),
            float(rng.uniform(1.2, 3.2))};
    p.alpha = float(rng.uniform(0.2, 0.8));
    p.rot = {float(rng.normal()), float(rng.normal()), float(rng.normal()),
             float(rng.normal())};
    const float qn = p.rot.norm();
    p.rot = {p.rot.w / qn, p.rot.x / qn, p.rot.y / qn, p.rot.z / qn};
    p.scale = {float(rng.uniform(0.05, 0.25)), float(rng.uniform(0.05, 0.25)),
               float(rng.uniform(0.05, 0.25))};
    const Vec3<float> rgb{float(rng.uniform(0.2, 0.8)),
                          float(rng.uniform(0.2, 0.8)),
                          float(rng.uniform(0.2, 0.8))};
    p.sh = sh_from_rgb(rgb);
    if (sh_degree >= 1)
      for (int ch = 0; ch < 3; ++ch)
        for (int b = 1; b <= 3; ++b)
          p.sh[ch * 4 + b] = float(rng.uniform(-0.08, 0.08));
    scene.prims.push_back(p);
  }
  return scene;
}

double weighted_sum(const Plane<double>& img, const std::vector<double>& w) {
  double acc = 0;
  for (std::size_t i = 0; i < img.data.size(); ++i) acc += img.data[i] * w[i];
  return acc;
}

}  // namespace

TEST_CASE("empty scene renders the background everywhere") {
  GaussianScene scene;
  RenderTarget target{16, 16, {0.25f, 0.5f, 0.75f}};
  const Image img = render(scene, test_camera(), target);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      REQUIRE(img.at(x, y, 0) == 0.25f);
      REQUIRE(img.at(x, y, 1) == 0.5f);
      REQUIRE(img.at(x, y, 2) == 0.75f);
    }
}

TEST_CASE("empty scene depth map is the configured far value") {
  GaussianScene scene;
  RenderTarget target{8, 8, {0, 0, 0}};
  RasterSettings cfg;
  cfg.far = 7.5;
  const Image depth = render_depth(scene, test_camera(8), target, cfg);
  for (float v : depth.data) REQUIRE(v == 7.5f);
}

TEST_CASE("single on-axis Gaussian renders symmetric with peak at center") {
  // Odd-sized image so the principal point is exactly the center pixel.
  Camera cam;
  cam.fx = cam.fy = 17.0f;
  cam.cx = cam.cy = 8.0f;
  cam.width = cam.height = 17;
  GaussianScene scene;
  scene.sh_degree = 0;
  scene.prims.push_back(white_gaussian({0, 0, 2}, 1.0f, 0.3f));
  RenderTarget target{17, 17, {0, 0, 0}};
  const Image img = render(scene, cam, target);
  const float peak = img.at(8, 8, 0);
  for (int y = 0; y < 17; ++y)
    for (int x = 0; x < 17; ++x) {
      REQUIRE(img.at(x, y, 0) <= peak + 1e-7f);
      // Mirror symmetry about both axes through the principal point.
      REQUIRE(img.at(x, y, 0) ==
              Catch::Approx(img.at(16 - x, y, 0)).margin(1e-6));
      REQUIRE(img.at(x, y, 0) ==
              Catch::Approx(img.at(x, 16 - y, 0)).margin(1e-6));
    }
  REQUIRE(peak > 0.5f);
}

TEST_CASE("two-layer compositing matches the scalar oracle at the peak") {
  // Front red Gaussian at depth 1, back green at depth 2, both opaque.
  GaussianScene scene;
  scene.sh_degree = 0;
  GaussianPrimitive front = white_gaussian({0, 0, 1}, 1.0f, 0.3f);
  front.sh = sh_from_rgb({1, 0, 0});
  GaussianPrimitive back = white_gaussian({0, 0, 2}, 1.0f, 0.6f);
  back.sh = sh_from_rgb({0, 1, 0});
  scene.prims.push_back(back);   // storage order: back first
  scene.prims.push_back(front);  // depth sort must put front first anyway
  Camera cam;
  cam.fx = cam.fy = 17.0f;
  cam.cx = cam.cy = 8.0f;
  cam.width = cam.height = 17;
  RenderTarget target{17, 17, {0, 0, 0}};
  RasterSettings cfg;
  const Image img = render(scene, cam, target, cfg);

  // Scalar 2-term oracle at the shared peak pixel: g = 1 at both centers so
  // both samples hit the opacity ceiling.
  const double a_eff = cfg.alpha_max;
  const double expect_r = a_eff * 1.0;
  const double expect_g = (1 - a_eff) * a_eff * 1.0;
  REQUIRE(img.at(8, 8, 0) == Catch::Approx(expect_r).margin(1e-5));
  REQUIRE(img.at(8, 8, 1) == Catch::Approx(expect_g).margin(1e-5));
  // The back Gaussian leaks at most the post-front transmittance.
  REQUIRE(img.at(8, 8, 1) <= 1.0f - float(cfg.alpha_max) + 1e-6f);
}

TEST_CASE("depth render matches a two-term weighted-mean oracle") {
  GaussianScene scene;
  scene.sh_degree = 0;
  scene.prims.push_back(white_gaussian({0, 0, 1}, 0.6f, 0.3f));
  scene.prims.push_back(white_gaussian({0, 0, 2}, 0.9f, 0.6f));
  Camera cam;
  cam.fx = cam.fy = 17.0f;
  cam.cx = cam.cy = 8.0f;
  cam.width = cam.height = 17;
  RenderTarget target{17, 17, {0, 0, 0}};
  RasterSettings cfg;
  const Image depth = render_depth(scene, cam, target, cfg);
  // At the shared center both gs are ~1.
  const double a1 = 0.6, a2 = 0.9;
  const double w1 = a1, w2 = (1 - a1) * a2;
  const double rest = (1 - a1) * (1 - a2);
  const double expect = 1.0 * w1 + 2.0 * w2 + cfg.far * rest;
  REQUIRE(depth.at(8, 8, 0) == Catch::Approx(expect).margin(1e-3));
}

TEST_CASE("single Gaussian at depth 2 dominates the depth map at its peak") {
  GaussianScene scene;
  scene.sh_degree = 0;
  scene.prims.push_back(white_gaussian({0, 0, 2}, 0.999f, 1.0f));
  Camera cam = test_camera(17);
  cam.cx = cam.cy = 8.0f;
  RenderTarget target{17, 17, {0, 0, 0}};
  const Image depth = render_depth(scene, cam, target);
  REQUIRE(depth.at(8, 8, 0) == Catch::Approx(2.0).margin(0.02));
}

TEST_CASE("rendering is invariant under storage permutation") {
  Rng rng(61);
  GaussianScene scene = random_scene(rng, 12, 1);
  const Camera cam = test_camera(32);
  RenderTarget target{32, 32, {0.1f, 0.1f, 0.1f}};
  const Image a = render(scene, cam, target);

  // Rotate storage order; depths are random doubles so ties never happen.
  GaussianScene permuted;
  permuted.sh_degree = scene.sh_degree;
  for (std::size_t i = 0; i < scene.prims.size(); ++i)
    permuted.prims.push_back(scene.prims[(i + 5) % scene.prims.size()]);
  const Image b = render(permuted, cam, target);
  REQUIRE(a.data == b.data);  // bit-identical
}

TEST_CASE("rendering is invariant under thread count") {
  Rng rng(62);
  GaussianScene scene = random_scene(rng, 20, 1);
  const Camera cam = test_camera(48);
  RenderTarget target{48, 48, {0, 0, 0}};
  RasterSettings one;
  one.threads = 1;
  RasterSettings four;
  four.threads = 4;
  const Image a = render(scene, cam, target, one);
  const Image b = render(scene, cam, target, four);
  REQUIRE(a.data == b.data);

  // Backward too.
  Plane<float> up(48, 48, 3, 1.0f);
  const auto ga = render_backward<float>(scene, cam, target, up, one);
  const auto gb = render_backward<float>(scene, cam, target, up, four);
  for (std::size_t i = 0; i < scene.prims.size(); ++i) {
    REQUIRE(ga.dalpha[i] == gb.dalpha[i]);
    for (int k = 0; k < 3; ++k) REQUIRE(ga.dmu[i][k] == gb.dmu[i][k]);
  }
}

TEST_CASE("accumulated color stays in gamut and image linear in DC coefficients") {
  Rng rng(63);
  GaussianScene scene = random_scene(rng, 10, 0);
  const Camera cam = test_camera(24);
  RenderTarget target{24, 24, {0, 0, 0}};
  const Image img = render(scene, cam, target);
  for (float v : img.data) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
  // Halving all DC coefficients halves the image over a black background
  // (colors stay inside the clamp).
  GaussianScene half = scene;
  for (auto& p : half.prims)
    for (int ch = 0; ch < 3; ++ch) p.sh[ch * 4] *= 0.5f;
  const Image img2 = render(half, cam, target);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    REQUIRE(img2.data[i] == Catch::Approx(img.data[i] * 0.5).margin(1e-6));
}

TEST_CASE("backward: zero upstream gradient gives zero parameter gradients") {
  Rng rng(64);
  GaussianScene scene = random_scene(rng, 5, 1);
  const Camera cam = test_camera();
  RenderTarget target{16, 16, {0, 0, 0}};
  Plane<float> zero(16, 16, 3, 0.0f);
  const auto g = render_backward<float>(scene, cam, target, zero);
  for (std::size_t i = 0; i < scene.prims.size(); ++i) {
    REQUIRE(g.dalpha[i] == 0.0f);
    for (int k = 0; k < 3; ++k) REQUIRE(g.dmu[i][k] == 0.0f);
    for (int k = 0; k < 12; ++k) REQUIRE(g.dsh[i][k] == 0.0f);
  }
}

TEST_CASE("backward: opacity gradient is positive for white-on-black sum loss") {
  GaussianScene scene;
  scene.sh_degree = 0;
  scene.prims.push_back(white_gaussian({0, 0, 2}, 0.5f, 0.3f));
  const Camera cam = test_camera();
  RenderTarget target{16, 16, {0, 0, 0}};
  Plane<float> up(16, 16, 3, 1.0f);  // L = sum of image
  const auto g = render_backward<float>(scene, cam, target, up);
  REQUIRE(g.dalpha[0] > 0.0f);
}

TEST_CASE("backward matches central finite differences on random scenes") {
  // The full-precision gradient oracle: for a random linear loss
  // L = sum(w * image), compare every analytic parameter gradient against
  // central differences at epsilon 1e-3 in double precision.
  const RasterSettings cfg = RasterSettings::verification();
  const Camera cam = test_camera(16);
  RenderTarget target{16, 16, {0.2f, 0.3f, 0.4f}};

  Rng wrng(70);
  std::vector<double> w(16 * 16 * 3);
  for (double& v : w) v = wrng.uniform(-1, 1);
  Plane<double> up(16, 16, 3);
  for (std::size_t i = 0; i < w.size(); ++i) up.data[i] = w[i];

  const double eps = 1e-3;
  double worst = 0.0;
  int checked = 0;

  for (int scene_idx = 0; scene_idx < 4; ++scene_idx) {
    Rng rng(100 + std::uint64_t(scene_idx));
    GaussianScene scene = random_scene(rng, 5, 1);
    const auto grads = render_backward<double>(scene, cam, target, up, cfg);

    auto loss_with = [&](const GaussianScene& s) {
      return weighted_sum(render_plane<double>(s, cam, target, cfg), w);
    };
    auto check = [&](double analytic, float* slot) {
      const float orig = *slot;
      *slot = float(double(orig) + eps);
      const double lp = loss_with(scene);
      *slot = float(double(orig) - eps);
      const double lm = loss_with(scene);
      *slot = orig;
      const double numeric = (lp - lm) / (2 * eps);
      if (std::fabs(analytic) < 1e-8 && std::fabs(numeric) < 1e-6) return;
      const double rel = std::fabs(analytic - numeric) /
                         std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
      worst = std::max(worst, rel);
      ++checked;
      REQUIRE(rel < 1e-2);
    };

    for (std::size_t i = 0; i < scene.prims.size(); ++i) {
      GaussianPrimitive& p = scene.prims[i];
      for (int k = 0; k < 3; ++k) check(grads.dmu[i][k], &p.mu[k]);
      check(grads.dalpha[i], &p.alpha);
      check(grads.drot[i][0], &p.rot.w);
      check(grads.drot[i][1], &p.rot.x);
      check(grads.drot[i][2], &p.rot.y);
      check(grads.drot[i][3], &p.rot.z);
      for (int k = 0; k < 3; ++k) check(grads.dscale[i][k], &p.scale[k]);
      for (int k = 0; k < 12; ++k) check(grads.dsh[i][k], &p.sh[k]);
    }
  }
  INFO("worst relative error " << worst << " over " << checked << " params");
  REQUIRE(checked > 200);
}
