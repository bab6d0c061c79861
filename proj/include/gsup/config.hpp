#pragma once
// Flat key=value run configuration. The key set is closed: unknown keys are
// rejected so a typo cannot silently fall back to a default. Files use one
// `key = value` pair per line with `#` comments; command-line overrides use
// the same `key=value` syntax.

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gsup/gaussian.hpp"  // Error

namespace gsup {

struct RunConfig {
  std::uint64_t seed = 1;

  // Data generation.
  int data_scenes = 16;
  int data_holdout = 4;
  int data_cameras = 6;
  int data_hr_size = 256;
  int data_factor = 4;
  int data_min_gaussians = 200;
  int data_max_gaussians = 2000;
  std::string data_lr_filter = "area";  // area | lanczos

  // Densification of the low-resolution reconstruction.
  float densify_beta = 0.5f;
  float densify_threshold = 0.5f;

  // Optimization schedule.
  int train_steps = 5000;
  int train_batch = 2;
  float train_lr = 2.5e-5f;
  int train_log_interval = 50;

  // Loss weights.
  float loss_mse = 1.0f;
  float loss_perceptual = 0.05f;

  // Mapping network.
  int net_patch = 16;
  int net_embed = 64;
  int net_heads = 4;
  int net_refine_heads = 1;
  int net_enc_depth = 2;
  int net_dec_depth = 2;
  int net_enc_mlp_ratio = 4;
  int net_point_width = 32;
  int net_point_heads = 4;
  int net_point_depth = 2;
  int net_point_mlp_ratio = 2;
  int net_knn = 16;
  float net_scale_clamp = 1.3862943611198906f;
  float net_pos_cap_factor = 2.0f;
  bool net_constrained_compose = true;

  // Low-resolution backbone.
  int bb_patch = 4;
  int bb_embed = 64;
  int bb_heads = 4;
  int bb_depth = 2;
  int bb_mlp_ratio = 4;
  int bb_head_hidden = 32;
  float bb_alpha_logit = 1.5f;
  float bb_base_scale = 0.5f;
  int bb_pretrain_steps = 600;
  float bb_lr = 1e-3f;

  // Evaluation-time switches and the upsampling method for the image branch.
  std::string eval_upsample = "bicubic";  // nearest | bilinear | bicubic
  bool eval_refine = true;
  bool eval_point_blocks = true;
  bool eval_offsets = true;
};

namespace configdetail {

struct Binder {
  std::string key;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (...) {
    used = 0;
  }
  if (used != v.size())
    throw Error("config key '" + key + "': expected an integer, got '" + v +
                "'");
  return out;
}

inline double parse_float(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (...) {
    used = 0;
  }
  if (used != v.size())
    throw Error("config key '" + key + "': expected a number, got '" + v +
                "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config key '" + key + "': expected true/false, got '" + v +
              "'");
}

inline const std::vector<Binder>& binders() {
  static const std::vector<Binder> list = [] {
    std::vector<Binder> b;
    auto add_u64 = [&](const char* k, const char* d,
                       std::uint64_t RunConfig::* f) {
      b.push_back({k, d, [k, f](RunConfig& c, const std::string& v) {
                     c.*f = std::uint64_t(parse_int(k, v));
                   }});
    };
    auto add_int = [&](const char* k, const char* d, int RunConfig::* f) {
      b.push_back({k, d, [k, f](RunConfig& c, const std::string& v) {
                     c.*f = int(parse_int(k, v));
                   }});
    };
    auto add_float = [&](const char* k, const char* d, float RunConfig::* f) {
      b.push_back({k, d, [k, f](RunConfig& c, const std::string& v) {
                     c.*f = float(parse_float(k, v));
                   }});
    };
    auto add_bool = [&](const char* k, const char* d, bool RunConfig::* f) {
      b.push_back({k, d, [k, f](RunConfig& c, const std::string& v) {
                     c.*f = parse_bool(k, v);
                   }});
    };
    auto add_str = [&](const char* k, const char* d,
                       std::string RunConfig::* f) {
      b.push_back(
          {k, d, [f](RunConfig& c, const std::string& v) { c.*f = v; }});
    };

    add_u64("seed", "root seed for data, init, and step scheduling",
            &RunConfig::seed);
    add_int("data.scenes", "training scene count", &RunConfig::data_scenes);
    add_int("data.holdout", "held-out evaluation scene count",
            &RunConfig::data_holdout);
    add_int("data.cameras", "cameras per scene ring (>= 4)",
            &RunConfig::data_cameras);
    add_int("data.hr_size", "high-resolution image side",
            &RunConfig::data_hr_size);
    add_int("data.factor", "super-resolution factor",
            &RunConfig::data_factor);
    add_int("data.min_gaussians", "minimum Gaussians per generated scene",
            &RunConfig::data_min_gaussians);
    add_int("data.max_gaussians", "maximum Gaussians per generated scene",
            &RunConfig::data_max_gaussians);
    add_str("data.lr_filter",
            "low-resolution synthesis filter: area | lanczos",
            &RunConfig::data_lr_filter);
    add_float("densify.beta", "child offset in parent standard deviations",
              &RunConfig::densify_beta);
    add_float("densify.threshold", "opacity threshold for splitting",
              &RunConfig::densify_threshold);
    add_int("train.steps", "optimization steps", &RunConfig::train_steps);
    add_int("train.batch", "scene-view pairs per step",
            &RunConfig::train_batch);
    add_float("train.lr", "Adam learning rate", &RunConfig::train_lr);
    add_int("train.log_interval", "steps between metric log rows",
            &RunConfig::train_log_interval);
    add_float("loss.mse", "pixel MSE weight", &RunConfig::loss_mse);
    add_float("loss.perceptual", "multi-scale feature loss weight",
              &RunConfig::loss_perceptual);
    add_int("net.patch", "mapping patch size over upsampled inputs",
            &RunConfig::net_patch);
    add_int("net.embed", "mapping token width", &RunConfig::net_embed);
    add_int("net.heads", "encoder/decoder attention heads",
            &RunConfig::net_heads);
    add_int("net.refine_heads", "cross-resolution refinement heads",
            &RunConfig::net_refine_heads);
    add_int("net.enc_depth", "encoder blocks", &RunConfig::net_enc_depth);
    add_int("net.dec_depth", "cross-view decoder blocks",
            &RunConfig::net_dec_depth);
    add_int("net.enc_mlp_ratio", "encoder MLP expansion",
            &RunConfig::net_enc_mlp_ratio);
    add_int("net.point_width", "point-block channel width",
            &RunConfig::net_point_width);
    add_int("net.point_heads", "point-block attention heads",
            &RunConfig::net_point_heads);
    add_int("net.point_depth", "point blocks", &RunConfig::net_point_depth);
    add_int("net.point_mlp_ratio", "point-block MLP expansion",
            &RunConfig::net_point_mlp_ratio);
    add_int("net.knn", "neighbors per Gaussian in point attention",
            &RunConfig::net_knn);
    add_float("net.scale_clamp", "log-scale offset clamp",
              &RunConfig::net_scale_clamp);
    add_float("net.pos_cap_factor",
              "position offset cap in median neighbor distances",
              &RunConfig::net_pos_cap_factor);
    add_bool("net.constrained_compose",
             "apply bounded offset composition (false = raw addition)",
             &RunConfig::net_constrained_compose);
    add_int("bb.patch", "backbone patch size over the LR image",
            &RunConfig::bb_patch);
    add_int("bb.embed", "backbone token width", &RunConfig::bb_embed);
    add_int("bb.heads", "backbone attention heads", &RunConfig::bb_heads);
    add_int("bb.depth", "backbone encoder blocks", &RunConfig::bb_depth);
    add_int("bb.mlp_ratio", "backbone MLP expansion",
            &RunConfig::bb_mlp_ratio);
    add_int("bb.head_hidden", "opacity/scale head width",
            &RunConfig::bb_head_hidden);
    add_float("bb.alpha_logit", "initial opacity logit bias",
              &RunConfig::bb_alpha_logit);
    add_float("bb.base_scale", "base scale in pixel footprints",
              &RunConfig::bb_base_scale);
    add_int("bb.pretrain_steps", "backbone photometric pretraining steps",
            &RunConfig::bb_pretrain_steps);
    add_float("bb.lr", "backbone pretraining learning rate",
              &RunConfig::bb_lr);
    add_str("eval.upsample",
            "image-branch upsampler: nearest | bilinear | bicubic",
            &RunConfig::eval_upsample);
    add_bool("eval.refine", "enable cross-resolution refinement",
             &RunConfig::eval_refine);
    add_bool("eval.point_blocks", "enable point attention blocks",
             &RunConfig::eval_point_blocks);
    add_bool("eval.offsets", "apply predicted offsets",
             &RunConfig::eval_offsets);
    return b;
  }();
  return list;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace configdetail

inline void apply_config_pair(RunConfig& cfg, const std::string& key,
                              const std::string& value) {
  for (const auto& b : configdetail::binders())
    if (b.key == key) {
      b.set(cfg, value);
      return;
    }
  throw Error("unknown config key '" + key + "'");
}

/// Applies one `key=value` override string.
inline void apply_config_override(RunConfig& cfg, const std::string& kv) {
  const std::size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw Error("config override '" + kv + "' is not of the form key=value");
  apply_config_pair(cfg, configdetail::trim(kv.substr(0, eq)),
                    configdetail::trim(kv.substr(eq + 1)));
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = configdetail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config file '" + path + "' line " +
                  std::to_string(lineno) + ": expected key = value");
    apply_config_pair(cfg, configdetail::trim(line.substr(0, eq)),
                      configdetail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

/// One line per documented key, for --help output.
inline std::string describe_config_keys() {
  std::ostringstream out;
  for (const auto& b : configdetail::binders())
    out << "  " << b.key << "  -  " << b.doc << "\n";
  return out.str();
}

}  // namespace gsup
