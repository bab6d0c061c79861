#include <catch2/catch_amalgamated.hpp>

#include "gsup/densify.hpp"
#include "gsup/rng.hpp"

using namespace gsup;

namespace {

GaussianPrimitive base_prim() {
  GaussianPrimitive p;
  p.mu = {0, 0, 0};
  p.alpha = 0.9f;
  p.rot = {1, 0, 0, 0};
  p.scale = {0.2f, 0.4f, 0.8f};
  p.sh = sh_from_rgb({0.8f, 0.2f, 0.1f});
  return p;
}

}  // namespace

TEST_CASE("shuffle split: axis-aligned oracle case") {
  // Oracle: direct evaluation of mu + beta * R * (e_k ⊙ s) for the identity
  // rotation, beta = 0.5, s = (0.2, 0.4, 0.8), in the fixed output order
  // +x, -x, +y, -y, +z, -z.
  GaussianScene scene;
  scene.prims.push_back(base_prim());
  const DensifyResult res = shuffle_split(scene, DensifyConfig{});
  REQUIRE(res.scene.prims.size() == 6);

  const float expect[6][3] = {{0.1f, 0, 0},  {-0.1f, 0, 0}, {0, 0.2f, 0},
                              {0, -0.2f, 0}, {0, 0, 0.4f},  {0, 0, -0.4f}};
  for (int k = 0; k < 6; ++k) {
    for (int d = 0; d < 3; ++d)
      REQUIRE(res.scene.prims[k].mu[d] ==
              Catch::Approx(expect[k][d]).margin(1e-7));
    REQUIRE(res.parent_index[k] == 0);
    // Inherited fields.
    REQUIRE(res.scene.prims[k].alpha == 0.9f);
    REQUIRE(res.scene.prims[k].rot.w == 1.0f);
    REQUIRE(res.scene.prims[k].sh == scene.prims[0].sh);
  }
  // The +x sub-Gaussian shrinks only its x scale: (0.05, 0.4, 0.8).
  REQUIRE(res.scene.prims[0].scale.x == Catch::Approx(0.05).margin(1e-7));
  REQUIRE(res.scene.prims[0].scale.y == 0.4f);
  REQUIRE(res.scene.prims[0].scale.z == 0.8f);
  // The +z sub-Gaussian shrinks only z.
  REQUIRE(res.scene.prims[4].scale.z == Catch::Approx(0.2).margin(1e-7));
  REQUIRE(res.scene.prims[4].scale.x == 0.2f);
}

TEST_CASE("shuffle split: below-threshold primitives pass through unchanged") {
  GaussianScene scene;
  GaussianPrimitive p = base_prim();
  p.alpha = 0.3f;
  scene.prims.push_back(p);
  const DensifyResult res = shuffle_split(scene, DensifyConfig{});
  REQUIRE(res.scene.prims.size() == 1);
  REQUIRE(res.scene.prims[0].mu.x == p.mu.x);
  REQUIRE(res.scene.prims[0].scale.x == p.scale.x);
  REQUIRE(res.parent_index[0] == 0);
}

TEST_CASE("shuffle split: 8192 opaque primitives yield 49152 outputs") {
  Rng rng(17);
  GaussianScene scene;
  for (int i = 0; i < 8192; ++i) {
    GaussianPrimitive p = base_prim();
    p.mu = {float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)),
            float(rng.uniform(-1, 1))};
    p.alpha = float(rng.uniform(0.51, 1.0));
    scene.prims.push_back(p);
  }
  const DensifyResult res = shuffle_split(scene, DensifyConfig{});
  REQUIRE(res.scene.prims.size() == 49152);
  REQUIRE(res.parent_index.size() == 49152);
}

TEST_CASE("shuffle split: count law for mixed scenes") {
  Rng rng(19);
  GaussianScene scene;
  std::size_t above = 0;
  for (int i = 0; i < 777; ++i) {
    GaussianPrimitive p = base_prim();
    p.alpha = float(rng.uniform(0, 1));
    if (p.alpha > 0.5f) ++above;
    scene.prims.push_back(p);
  }
  const DensifyResult res = shuffle_split(scene, DensifyConfig{});
  REQUIRE(res.scene.prims.size() == 6 * above + (777 - above));
}

TEST_CASE("shuffle split: offsets live in the principal frame for rotated Gaussians") {
  Rng rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    GaussianPrimitive p = base_prim();
    p.rot = {float(rng.normal()), float(rng.normal()), float(rng.normal()),
             float(rng.normal())};
    const float n = p.rot.norm();
    p.rot = {p.rot.w / n, p.rot.x / n, p.rot.y / n, p.rot.z / n};
    p.scale = {float(rng.uniform(0.05, 1)), float(rng.uniform(0.05, 1)),
               float(rng.uniform(0.05, 1))};
    p.mu = {float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)),
            float(rng.uniform(-1, 1))};
    GaussianScene scene;
    scene.prims.push_back(p);
    DensifyConfig cfg;
    cfg.beta = 0.5f;
    const DensifyResult res = shuffle_split(scene, cfg);
    const Mat3<float> Rt = quat_to_rotation(p.rot).transposed();

    const float sign[2] = {1.0f, -1.0f};
    Vec3<float> mean{0, 0, 0};
    for (int axis = 0; axis < 3; ++axis)
      for (int s = 0; s < 2; ++s) {
        const GaussianPrimitive& sub = res.scene.prims[axis * 2 + s];
        const Vec3<float> local = Rt * (sub.mu - p.mu);
        for (int d = 0; d < 3; ++d) {
          const float expect =
              (d == axis) ? sign[s] * cfg.beta * p.scale[axis] : 0.0f;
          REQUIRE(local[d] == Catch::Approx(expect).margin(1e-6));
        }
        // Non-offset-axis scales are exact copies.
        for (int d = 0; d < 3; ++d)
          if (d != axis) REQUIRE(sub.scale[d] == p.scale[d]);
        mean += sub.mu;
      }
    // The six sub-centers average back to the parent center.
    mean = mean / 6.0f;
    REQUIRE(norm(mean - p.mu) == Catch::Approx(0.0).margin(1e-6));
  }
}

TEST_CASE("shuffle split: config validation") {
  GaussianScene scene;
  DensifyConfig cfg;
  cfg.beta = 0.0f;
  REQUIRE_THROWS_AS(shuffle_split(scene, cfg), Error);
  cfg = DensifyConfig{};
  cfg.scale_shrink = 0.0f;
  REQUIRE_THROWS_AS(shuffle_split(scene, cfg), Error);
}

TEST_CASE("parent index sidecar round-trip") {
  const std::string path = "/tmp/gsup_test_parent.txt";
  std::vector<std::int32_t> idx = {0, 0, 0, 1, 5, 5};
  save_parent_index(idx, path);
  REQUIRE(load_parent_index(path) == idx);
  std::remove(path.c_str());
}
