#pragma once
// End-to-end harness: sample synthesis (HR renders with exact LR
// downsamples), backbone pretraining, scaffold construction, the
// mapping-network optimization loop, and switch-controlled evaluation over
// held-out scenes.

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "gsup/backbone.hpp"
#include "gsup/config.hpp"
#include "gsup/densify.hpp"
#include "gsup/loss.hpp"
#include "gsup/metrics.hpp"
#include "gsup/network.hpp"
#include "gsup/params.hpp"
#include "gsup/rasterizer.hpp"
#include "gsup/synthetic.hpp"

namespace gsup {

inline NetworkConfig network_config_from(const RunConfig& c) {
  NetworkConfig n;
  n.patch = c.net_patch;
  n.embed = c.net_embed;
  n.heads = c.net_heads;
  n.refine_heads = c.net_refine_heads;
  n.enc_depth = c.net_enc_depth;
  n.dec_depth = c.net_dec_depth;
  n.enc_mlp_ratio = c.net_enc_mlp_ratio;
  n.point_width = c.net_point_width;
  n.point_heads = c.net_point_heads;
  n.point_depth = c.net_point_depth;
  n.point_mlp_ratio = c.net_point_mlp_ratio;
  n.knn = c.net_knn;
  n.scale_clamp = c.net_scale_clamp;
  n.pos_cap_factor = c.net_pos_cap_factor;
  n.constrained_compose = c.net_constrained_compose;
  n.validate();
  return n;
}

inline BackboneConfig backbone_config_from(const RunConfig& c) {
  BackboneConfig b;
  b.patch = c.bb_patch;
  b.embed = c.bb_embed;
  b.heads = c.bb_heads;
  b.depth = c.bb_depth;
  b.mlp_ratio = c.bb_mlp_ratio;
  b.head_hidden = c.bb_head_hidden;
  b.alpha_logit_init = c.bb_alpha_logit;
  b.base_scale_factor = c.bb_base_scale;
  b.validate();
  return b;
}

inline SyntheticSceneSpec scene_spec_from(const RunConfig& c,
                                          std::uint64_t scene_seed) {
  SyntheticSceneSpec s;
  s.seed = scene_seed;
  s.min_gaussians = c.data_min_gaussians;
  s.max_gaussians = c.data_max_gaussians;
  s.cameras = c.data_cameras;
  s.width = c.data_hr_size;
  s.height = c.data_hr_size;
  s.validate();
  return s;
}

/// Cross-checks that tie the stages together; failures are configuration
/// errors the user can act on.
inline void validate_pipeline_config(const RunConfig& c) {
  const NetworkConfig n = network_config_from(c);
  const BackboneConfig b = backbone_config_from(c);
  if (c.data_factor < 1 || c.data_hr_size % c.data_factor)
    throw Error("config: data.hr_size must be divisible by data.factor");
  const int lr_size = c.data_hr_size / c.data_factor;
  if (lr_size % b.patch)
    throw Error("config: low-res size must be divisible by bb.patch");
  if (c.data_hr_size % n.patch)
    throw Error("config: data.hr_size must be divisible by net.patch");
  const int map_tokens = (c.data_hr_size / n.patch) * (c.data_hr_size / n.patch);
  const int bb_tokens = (lr_size / b.patch) * (lr_size / b.patch);
  if (map_tokens != bb_tokens || n.embed != b.embed)
    throw Error(
        "config: cross-resolution refinement requires matching token grids "
        "(net " +
        std::to_string(map_tokens) + "x" + std::to_string(n.embed) +
        " vs backbone " + std::to_string(bb_tokens) + "x" +
        std::to_string(b.embed) + ")");
  resample_method_from_string(c.eval_upsample);
  if (c.data_lr_filter != "area" && c.data_lr_filter != "lanczos")
    throw Error("config: data.lr_filter must be 'area' or 'lanczos'");
  if (c.train_batch < 1) throw Error("config: train.batch must be >= 1");
  if (c.train_log_interval < 1)
    throw Error("config: train.log_interval must be >= 1");
  if (c.data_holdout < 1) throw Error("config: data.holdout must be >= 1");
  LossWeights w;
  w.mse = c.loss_mse;
  w.perceptual = c.loss_perceptual;
  w.validate();
}

// ---------------------------------------------------------------------------
// Training samples

struct TrainSample {
  SyntheticScene world;
  std::array<int, 2> input_views{0, 1};
  std::vector<int> target_views;
  std::array<Image, 2> lr_images;   // exact downsamples of the HR renders
  std::array<Image, 2> lr_depths;   // rendered at the LR cameras
  std::array<Camera, 2> lr_cameras;
  std::vector<Image> hr_targets;    // aligned with target_views
};

inline TrainSample make_train_sample(const SyntheticSceneSpec& spec,
                                     int factor,
                                     const std::string& lr_filter,
                                     bool render_targets = true,
                                     const RasterSettings& raster = {}) {
  TrainSample s;
  s.world = generate_scene(spec);
  RenderTarget hr;
  hr.width = spec.width;
  hr.height = spec.height;
  for (int v = 0; v < 2; ++v) {
    const Camera& cam = s.world.cameras[std::size_t(s.input_views[v])];
    const Image hr_render = render(s.world.scene, cam, hr, raster);
    s.lr_images[std::size_t(v)] =
        lr_filter == "lanczos" ? downsample_lanczos(hr_render, factor)
                               : downsample_area(hr_render, factor);
    s.lr_cameras[std::size_t(v)] = scale_camera(cam, factor);
    RenderTarget lrt;
    lrt.width = spec.width / factor;
    lrt.height = spec.height / factor;
    s.lr_depths[std::size_t(v)] = render_depth(
        s.world.scene, s.lr_cameras[std::size_t(v)], lrt, raster);
  }
  for (int t = 2; t < int(s.world.cameras.size()); ++t) {
    s.target_views.push_back(t);
    if (render_targets)
      s.hr_targets.push_back(
          render(s.world.scene, s.world.cameras[std::size_t(t)], hr, raster));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Per-scene constants for the mapping stage

struct SceneCache {
  TrainSample sample;
  GaussianScene lr_union;   // both backbone reconstructions, view 0 first
  GaussianScene scaffold;
  MappingInputs inputs;
};

inline MappingInputs build_mapping_inputs(
    const TrainSample& sample, const GaussianScene& scaffold,
    const std::vector<std::int32_t>& parent_index, int view0_count,
    std::array<std::vector<float>, 2> backbone_tokens,
    const NetworkConfig& ncfg, const std::string& upsample_method,
    int factor) {
  MappingInputs in;
  const ResampleMethod method = resample_method_from_string(upsample_method);
  for (int v = 0; v < 2; ++v) {
    const Image up = upsample(sample.lr_images[std::size_t(v)], factor, method);
    in.patches[std::size_t(v)] = extract_patches(up, ncfg.patch);
    const Camera& cam = sample.world.cameras[std::size_t(sample.input_views[v])];
    in.intr[std::size_t(v)] = normalized_intrinsics(cam);
    in.backbone_tokens[std::size_t(v)] = std::move(backbone_tokens[std::size_t(v)]);
    in.tokens_per_view = int(in.patches[std::size_t(v)].size()) /
                         (ncfg.patch * ncfg.patch * 3);
  }
  in.patch_dim = ncfg.patch * ncfg.patch * 3;

  const int n = int(scaffold.size());
  std::vector<Vec3<float>> centers;
  centers.reserve(std::size_t(n));
  Vec3<float> centroid{0, 0, 0};
  for (const auto& p : scaffold.prims) {
    centers.push_back(p.mu);
    centroid = centroid + p.mu;
  }
  centroid = centroid * (1.0f / float(std::max(1, n)));
  float extent = 1e-4f;
  for (const auto& p : scaffold.prims) {
    extent = std::max(extent, std::fabs(p.mu.x - centroid.x));
    extent = std::max(extent, std::fabs(p.mu.y - centroid.y));
    extent = std::max(extent, std::fabs(p.mu.z - centroid.z));
  }
  in.view_of.resize(std::size_t(n));
  in.token_of.resize(std::size_t(n));
  in.mu_norm.resize(std::size_t(n) * 3);
  for (int i = 0; i < n; ++i) {
    const int view = parent_index[std::size_t(i)] < view0_count ? 0 : 1;
    in.view_of[std::size_t(i)] = view;
    const Camera& cam =
        sample.world.cameras[std::size_t(sample.input_views[std::size_t(view)])];
    in.token_of[std::size_t(i)] =
        token_index_for(cam, scaffold.prims[std::size_t(i)].mu, ncfg.patch);
    in.mu_norm[std::size_t(i) * 3 + 0] =
        (scaffold.prims[std::size_t(i)].mu.x - centroid.x) / extent;
    in.mu_norm[std::size_t(i) * 3 + 1] =
        (scaffold.prims[std::size_t(i)].mu.y - centroid.y) / extent;
    in.mu_norm[std::size_t(i) * 3 + 2] =
        (scaffold.prims[std::size_t(i)].mu.z - centroid.z) / extent;
  }
  in.knn = build_knn(centers, ncfg.knn);
  in.pos_cap =
      ncfg.pos_cap_factor * std::max(in.knn.median_nn_distance, 1e-4f);
  return in;
}

inline SceneCache build_scene_cache(TrainSample sample, ParamStore& bb_store,
                                    const BackboneConfig& bcfg,
                                    const NetworkConfig& ncfg,
                                    const RunConfig& cfg) {
  SceneCache c;
  c.sample = std::move(sample);
  std::array<std::vector<float>, 2> tokens;
  for (int v = 0; v < 2; ++v) {
    BackboneReconstruction r = backbone_reconstruct(
        bb_store, bcfg, c.sample.lr_images[std::size_t(v)],
        c.sample.lr_depths[std::size_t(v)],
        c.sample.lr_cameras[std::size_t(v)]);
    if (v == 0) {
      c.lr_union = std::move(r.scene);
    } else {
      c.lr_union.prims.insert(c.lr_union.prims.end(), r.scene.prims.begin(),
                              r.scene.prims.end());
    }
    tokens[std::size_t(v)] = std::move(r.tokens);
  }
  c.lr_union.sh_degree = 1;
  const int view0_count = int(c.lr_union.size()) / 2;

  DensifyConfig dc;
  dc.beta = cfg.densify_beta;
  dc.opacity_threshold = cfg.densify_threshold;
  DensifyResult dr = shuffle_split(c.lr_union, dc);
  c.scaffold = std::move(dr.scene);
  c.inputs = build_mapping_inputs(c.sample, c.scaffold, dr.parent_index,
                                  view0_count, std::move(tokens), ncfg,
                                  cfg.eval_upsample, cfg.data_factor);
  return c;
}

inline ComposeConfig compose_config_from(const NetworkConfig& ncfg,
                                         float pos_cap) {
  ComposeConfig cc;
  cc.pos_cap = pos_cap;
  cc.scale_clamp = ncfg.scale_clamp;
  cc.constrained = ncfg.constrained_compose;
  return cc;
}

// ---------------------------------------------------------------------------
// Backbone pretraining

inline std::string fmt_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct PretrainResult {
  double first_loss = 0;
  double final_loss = 0;
  double val_psnr = 0;
};

/// Photometric pretraining over the training scenes' LR views. Marks the
/// backbone frozen (non-trainable) when done and reports the re-rendering
/// PSNR over the training views.
inline PretrainResult pretrain_backbone(const RunConfig& cfg,
                                        ParamStore& store,
                                        std::ostream* log = nullptr,
                                        const RasterSettings& raster = {}) {
  validate_pipeline_config(cfg);
  const BackboneConfig bcfg = backbone_config_from(cfg);
  const int lr_size = cfg.data_hr_size / cfg.data_factor;
  const int tokens = (lr_size / bcfg.patch) * (lr_size / bcfg.patch);
  register_backbone_params(store, bcfg, tokens, bcfg.patch * bcfg.patch * 3);

  struct View {
    Image img, depth;
    Camera cam;
  };
  std::vector<View> views;
  for (int i = 0; i < cfg.data_scenes; ++i) {
    const TrainSample s =
        make_train_sample(scene_spec_from(
                              cfg, Rng::stream(cfg.seed, "data/scene",
                                               std::uint64_t(i))
                                       .next_u64()),
                          cfg.data_factor, cfg.data_lr_filter,
                          /*render_targets=*/false, raster);
    for (int v = 0; v < 2; ++v)
      views.push_back({s.lr_images[std::size_t(v)],
                       s.lr_depths[std::size_t(v)],
                       s.lr_cameras[std::size_t(v)]});
  }

  PretrainResult out;
  if (log) *log << "step,loss\n";
  for (int step = 0; step < cfg.bb_pretrain_steps; ++step) {
    Rng pick(Rng::stream(cfg.seed, "backbone/pick", std::uint64_t(step)));
    const View& v = views[std::size_t(pick.uniform_int(views.size()))];
    const double loss =
        backbone_train_step(store, bcfg, v.img, v.depth, v.cam, cfg.bb_lr,
                            raster);
    if (step == 0) out.first_loss = loss;
    out.final_loss = loss;
    if (log && (step % cfg.train_log_interval == 0 ||
                step + 1 == cfg.bb_pretrain_steps))
      *log << step << "," << fmt_g9(loss) << "\n";
  }

  // Freeze and measure re-rendering quality.
  store.set_trainable("bb.", false);
  double psnr_acc = 0;
  RenderTarget lrt;
  lrt.width = lrt.height = lr_size;
  for (const View& v : views) {
    const BackboneReconstruction r =
        backbone_reconstruct(store, bcfg, v.img, v.depth, v.cam);
    psnr_acc += psnr(render(r.scene, v.cam, lrt, raster), v.img);
  }
  out.val_psnr = views.empty() ? 0 : psnr_acc / double(views.size());
  return out;
}

// ---------------------------------------------------------------------------
// Mapping-network training

struct StepStats {
  double total = 0, mse = 0, perceptual = 0;
};

inline StepStats mapping_train_step(ParamStore& store,
                                    const NetworkConfig& ncfg,
                                    const RunConfig& cfg,
                                    std::vector<SceneCache>& caches,
                                    int step,
                                    const RasterSettings& raster = {}) {
  LossWeights w;
  w.mse = cfg.loss_mse;
  w.perceptual = cfg.loss_perceptual;
  const int batch = std::max(1, cfg.train_batch);
  store.zero_grads();
  StepStats stats;
  RenderTarget rt;
  rt.width = rt.height = cfg.data_hr_size;
  for (int b = 0; b < batch; ++b) {
    Rng pick(Rng::stream(cfg.seed, "train/pick",
                         std::uint64_t(step) * std::uint64_t(batch) +
                             std::uint64_t(b)));
    SceneCache& c = caches[std::size_t(pick.uniform_int(caches.size()))];
    const int target =
        int(pick.uniform_int(std::uint64_t(c.sample.target_views.size())));

    Graph<float> g;
    ParamBinding<float> P(g, store);
    const Tensor<float> offsets =
        predict_offsets(g, P, ncfg, c.inputs, MappingSwitches{});
    const ComposeConfig cc = compose_config_from(ncfg, c.inputs.pos_cap);
    const GaussianScene hr =
        compose_offsets(c.scaffold, g.value(offsets), cc);
    const Camera& cam =
        c.sample.world.cameras[std::size_t(c.sample.target_views[std::size_t(target)])];
    const Image rendered = render(hr, cam, rt, raster);
    LossResult L =
        compute_loss(rendered, c.sample.hr_targets[std::size_t(target)], w);
    stats.total += L.total / batch;
    stats.mse += L.mse_term / batch;
    stats.perceptual += L.perceptual_term / batch;

    for (float& v : L.dimage.data) v /= float(batch);
    const SplatGradients sg =
        render_backward<float>(hr, cam, rt, L.dimage, raster);
    const std::vector<float> doff =
        compose_backward(c.scaffold, g.value(offsets), cc, sg);
    g.backward_seeded({{offsets, doff}});
    P.collect();
  }
  store.adam_step(cfg.train_lr);
  return stats;
}

struct TrainResult {
  int steps_run = 0;
  double first_loss = 0;
  double last_smoothed = 0;
};

/// Optimizes the mapping network against the training scenes, logging a CSV
/// of loss terms. Resumes from the step recorded in the store.
inline TrainResult train_mapping(const RunConfig& cfg, ParamStore& bb_store,
                                 ParamStore& map_store,
                                 const std::string& metrics_csv,
                                 const std::function<void(int, const StepStats&)>&
                                     on_step = {},
                                 const RasterSettings& raster = {}) {
  validate_pipeline_config(cfg);
  const NetworkConfig ncfg = network_config_from(cfg);
  const BackboneConfig bcfg = backbone_config_from(cfg);
  const int tokens = (cfg.data_hr_size / ncfg.patch) *
                     (cfg.data_hr_size / ncfg.patch);
  register_mapping_params(map_store, ncfg, tokens,
                          ncfg.patch * ncfg.patch * 3);

  std::vector<SceneCache> caches;
  for (int i = 0; i < cfg.data_scenes; ++i)
    caches.push_back(build_scene_cache(
        make_train_sample(scene_spec_from(
                              cfg, Rng::stream(cfg.seed, "data/scene",
                                               std::uint64_t(i))
                                       .next_u64()),
                          cfg.data_factor, cfg.data_lr_filter, true, raster),
        bb_store, bcfg, ncfg, cfg));

  const int start = int(map_store.step());
  std::ofstream log;
  if (!metrics_csv.empty()) {
    log.open(metrics_csv, start > 0 ? std::ios::app : std::ios::out);
    if (!log) throw Error("cannot open metrics file '" + metrics_csv + "'");
    if (start == 0) log << "step,loss,mse,perceptual,smoothed\n";
  }

  TrainResult out;
  double ema = 0;
  bool ema_set = false;
  for (int step = start; step < cfg.train_steps; ++step) {
    const StepStats s =
        mapping_train_step(map_store, ncfg, cfg, caches, step, raster);
    if (step == 0) out.first_loss = s.total;
    ema = ema_set ? 0.98 * ema + 0.02 * s.total : s.total;
    ema_set = true;
    out.last_smoothed = ema;
    ++out.steps_run;
    if (log && (step % cfg.train_log_interval == 0 ||
                step + 1 == cfg.train_steps))
      log << step << "," << fmt_g9(s.total) << "," << fmt_g9(s.mse) << ","
          << fmt_g9(s.perceptual) << "," << fmt_g9(ema) << "\n";
    if (on_step) on_step(step, s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
  std::string variant;
  double psnr = 0;
  double ssim = 0;
  long gaussians = 0;  // average primitive count of the rendered model
};

inline std::vector<SceneCache> build_holdout_caches(
    const RunConfig& cfg, ParamStore& bb_store,
    const RasterSettings& raster = {}) {
  const NetworkConfig ncfg = network_config_from(cfg);
  const BackboneConfig bcfg = backbone_config_from(cfg);
  std::vector<SceneCache> caches;
  for (int i = 0; i < cfg.data_holdout; ++i)
    caches.push_back(build_scene_cache(
        make_train_sample(scene_spec_from(
                              cfg, Rng::stream(cfg.seed, "data/holdout",
                                               std::uint64_t(i))
                                       .next_u64()),
                          cfg.data_factor, cfg.data_lr_filter, true, raster),
        bb_store, bcfg, ncfg, cfg));
  return caches;
}

/// Renders one variant over every held-out target view and averages PSNR
/// and SSIM. Known variants: full, no-refine, no-point-blocks, no-offset,
/// scaffold, lr-upsampled.
inline EvalRow evaluate_variant(const std::string& variant,
                                const RunConfig& cfg, ParamStore& map_store,
                                std::vector<SceneCache>& caches,
                                const RasterSettings& raster = {}) {
  const NetworkConfig ncfg = network_config_from(cfg);
  RenderTarget rt;
  rt.width = rt.height = cfg.data_hr_size;
  EvalRow row;
  row.variant = variant;
  long count_acc = 0;
  int views = 0;
  for (SceneCache& c : caches) {
    GaussianScene model;
    if (variant == "lr-upsampled") {
      model = c.lr_union;
    } else if (variant == "scaffold" || variant == "no-offset") {
      // Identity composition: offsets do not apply.
      model = compose_offsets(
          c.scaffold,
          std::vector<float>(c.scaffold.size() * OffsetLayout::kTotal, 0.0f),
          compose_config_from(ncfg, c.inputs.pos_cap));
    } else {
      MappingSwitches sw;
      if (variant == "no-refine") sw.refine = false;
      else if (variant == "no-point-blocks") sw.point_blocks = false;
      else if (variant != "full")
        throw Error("unknown evaluation variant '" + variant + "'");
      Graph<float> g;
      ParamBinding<float> P(g, map_store);
      const Tensor<float> offsets = predict_offsets(g, P, ncfg, c.inputs, sw);
      model = compose_offsets(c.scaffold, g.value(offsets),
                              compose_config_from(ncfg, c.inputs.pos_cap));
    }
    for (std::size_t t = 0; t < c.sample.target_views.size(); ++t) {
      const Camera& cam =
          c.sample.world.cameras[std::size_t(c.sample.target_views[t])];
      Image rendered;
      if (variant == "lr-upsampled") {
        const Camera lr_cam = scale_camera(cam, cfg.data_factor);
        RenderTarget lrt;
        lrt.width = rt.width / cfg.data_factor;
        lrt.height = rt.height / cfg.data_factor;
        rendered = upsample(render(model, lr_cam, lrt, raster),
                            cfg.data_factor,
                            resample_method_from_string(cfg.eval_upsample));
      } else {
        rendered = render(model, cam, rt, raster);
      }
      row.psnr += psnr(rendered, c.sample.hr_targets[t]);
      row.ssim += ssim(rendered, c.sample.hr_targets[t]);
      ++views;
    }
    count_acc += long(model.size());
  }
  if (views > 0) {
    row.psnr /= views;
    row.ssim /= views;
  }
  row.gaussians = caches.empty() ? 0 : count_acc / long(caches.size());
  return row;
}

inline std::vector<EvalRow> evaluate_variants(
    const std::vector<std::string>& variants, const RunConfig& cfg,
    ParamStore& bb_store, ParamStore& map_store,
    const RasterSettings& raster = {}) {
  std::vector<SceneCache> caches = build_holdout_caches(cfg, bb_store, raster);
  std::vector<EvalRow> rows;
  for (const std::string& v : variants)
    rows.push_back(evaluate_variant(v, cfg, map_store, caches, raster));
  return rows;
}

inline void write_eval_csv(const std::vector<EvalRow>& rows,
                           std::ostream& out) {
  out << "variant,psnr,ssim,gaussians\n";
  for (const EvalRow& r : rows)
    out << r.variant << "," << fmt_g9(r.psnr) << "," << fmt_g9(r.ssim) << ","
        << r.gaussians << "\n";
}

}  // namespace gsup
