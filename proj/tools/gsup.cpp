// gsup — command-line front end for the Gaussian super-resolution pipeline.
//
// Subcommands cover the full workflow: synthesize datasets, pretrain the
// low-resolution backbone, densify scenes, train the mapping network,
// evaluate checkpoint variants, and inspect or render stored scenes.
//
// Exit codes: 0 on success, 1 on a runtime failure (one-line diagnostic on
// stderr), 2 on a usage error (diagnostic plus the relevant usage text).

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gsup/ply_io.hpp"
#include "gsup/trainer.hpp"

namespace {

using namespace gsup;

/// Command-line mistakes (unknown flag, missing value, bad config key).
/// These exit with status 2 and print the command's usage text; everything
/// else that throws is a runtime failure and exits with status 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Flag parsing

struct Flags {
  std::map<std::string, std::string> values;  // last occurrence wins
  std::vector<std::string> sets;              // repeated --set key=value
  bool help = false;
};

/// Parses `--name value` pairs from argv[start..). Every flag except --help
/// takes exactly one value; --set may repeat. Unknown names are rejected.
Flags parse_flags(int argc, char** argv, int start,
                  const std::vector<std::string>& known) {
  Flags f;
  for (int i = start; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--help" || arg == "-h") {
      f.help = true;
      continue;
    }
    if (arg.rfind("--", 0) != 0)
      throw UsageError("unexpected argument '" + arg + "'");
    const std::string name = arg.substr(2);
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw UsageError("unknown flag '" + arg + "'");
    if (i + 1 >= argc) throw UsageError("flag '" + arg + "' needs a value");
    const std::string value = argv[++i];
    if (name == "set")
      f.sets.push_back(value);
    else
      f.values[name] = value;
  }
  return f;
}

const std::string* find_flag(const Flags& f, const std::string& name) {
  auto it = f.values.find(name);
  return it == f.values.end() ? nullptr : &it->second;
}

const std::string& require_flag(const Flags& f, const std::string& name) {
  if (const std::string* v = find_flag(f, name)) return *v;
  throw UsageError("missing required flag '--" + name + "'");
}

std::string flag_or(const Flags& f, const std::string& name,
                    const std::string& fallback) {
  const std::string* v = find_flag(f, name);
  return v ? *v : fallback;
}

long parse_int_flag(const std::string& name, const std::string& v) {
  std::size_t used = 0;
  long out = 0;
  try {
    out = std::stol(v, &used);
  } catch (...) {
    used = 0;
  }
  if (used != v.size())
    throw UsageError("flag '--" + name + "': expected an integer, got '" + v +
                     "'");
  return out;
}

float parse_float_flag(const std::string& name, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (...) {
    used = 0;
  }
  if (used != v.size())
    throw UsageError("flag '--" + name + "': expected a number, got '" + v +
                     "'");
  return float(out);
}

/// Builds the run configuration: defaults, then --config file, then --set
/// overrides in order. Configuration mistakes are usage errors.
RunConfig config_from_flags(const Flags& f) {
  try {
    RunConfig cfg;
    if (const std::string* path = find_flag(f, "config"))
      cfg = load_run_config(*path);
    for (const std::string& kv : f.sets) apply_config_override(cfg, kv);
    validate_pipeline_config(cfg);
    return cfg;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

RasterSettings raster_from_flags(const Flags& f) {
  RasterSettings r;
  if (const std::string* v = find_flag(f, "threads"))
    r.threads = int(parse_int_flag("threads", *v));
  return r;
}

// Distinct initialization streams for the two parameter stores, derived from
// the run seed so one config pins the whole pipeline.
std::uint64_t backbone_store_seed(const RunConfig& cfg) { return cfg.seed + 1; }
std::uint64_t mapping_store_seed(const RunConfig& cfg) { return cfg.seed + 2; }

std::string pad3(int n) {
  std::ostringstream s;
  s << std::setw(3) << std::setfill('0') << n;
  return s.str();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

const char kConfigFlagsHelp[] =
    "  --config FILE    run configuration file (key = value lines, # comments)\n"
    "  --set KEY=VALUE  override one configuration key; may repeat\n";

const char kThreadsHelp[] =
    "  --threads N      rasterizer worker threads (default: GSUP_THREADS\n"
    "                   environment variable, else all hardware threads)\n";

std::string config_keys_help() {
  return "\nconfiguration keys (for --config files and --set overrides):\n" +
         describe_config_keys();
}

void print_eval_table(const std::vector<EvalRow>& rows) {
  std::cout << std::left << std::setw(18) << "variant" << std::right
            << std::setw(10) << "psnr" << std::setw(10) << "ssim"
            << std::setw(12) << "gaussians" << "\n";
  for (const EvalRow& r : rows)
    std::cout << std::left << std::setw(18) << r.variant << std::right
              << std::setw(10) << std::fixed << std::setprecision(3) << r.psnr
              << std::setw(10) << std::setprecision(4) << r.ssim
              << std::setw(12) << r.gaussians << "\n"
              << std::defaultfloat;
}

void write_eval_outputs(const std::vector<EvalRow>& rows, const Flags& f) {
  print_eval_table(rows);
  if (const std::string* out = find_flag(f, "out")) {
    std::ofstream csv(*out);
    if (!csv) throw Error("cannot open for writing: " + *out);
    write_eval_csv(rows, csv);
    if (!csv) throw Error("write failed: " + *out);
    std::cout << "wrote " << *out << "\n";
  }
}

// ---------------------------------------------------------------------------
// gen-data

std::string gen_data_usage() {
  return "usage: gsup gen-data --out DIR [--split train|holdout] [options]\n"
         "\n"
         "Synthesizes the configured scenes and writes, per scene i:\n"
         "  scene_i.ply      ground-truth Gaussian scene\n"
         "  cameras_i.txt    all ring cameras (text, one record per view)\n"
         "  lr_i_vV.png      low-resolution input views (V = 000, 001)\n"
         "  hr_i_vV.png      high-resolution target views (V >= 002)\n"
         "\n"
         "flags:\n"
         "  --out DIR        output directory (created if absent)\n"
         "  --split NAME     train (default) or holdout scene set\n" +
         std::string(kConfigFlagsHelp) + kThreadsHelp + config_keys_help();
}

int run_gen_data(const Flags& f) {
  const RunConfig cfg = config_from_flags(f);
  const std::string dir = require_flag(f, "out");
  const std::string split = flag_or(f, "split", "train");
  if (split != "train" && split != "holdout")
    throw UsageError("flag '--split': expected train or holdout, got '" +
                     split + "'");
  const bool train = split == "train";
  const int count = train ? cfg.data_scenes : cfg.data_holdout;
  const char* stream = train ? "data/scene" : "data/holdout";
  const RasterSettings raster = raster_from_flags(f);

  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    const TrainSample s = make_train_sample(
        scene_spec_from(cfg, Rng::stream(cfg.seed, stream, std::uint64_t(i))
                                 .next_u64()),
        cfg.data_factor, cfg.data_lr_filter, /*render_targets=*/true, raster);
    const std::string base = dir + "/" + (train ? "scene_" : "holdout_") +
                             pad3(i);
    save_ply(s.world.scene, base + ".ply");
    save_cameras(s.world.cameras,
                 dir + "/" + (train ? "cameras_" : "holdout_cameras_") +
                     pad3(i) + ".txt");
    for (int v = 0; v < 2; ++v)
      save_png(s.lr_images[std::size_t(v)],
               base + "_lr_v" + pad3(s.input_views[std::size_t(v)]) + ".png");
    for (std::size_t t = 0; t < s.target_views.size(); ++t)
      save_png(s.hr_targets[t],
               base + "_hr_v" + pad3(s.target_views[t]) + ".png");
    std::cout << base << ": " << s.world.scene.size() << " primitives, "
              << s.world.cameras.size() << " cameras\n";
  }
  std::cout << "wrote " << count << " " << split << " scene(s) to " << dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain-backbone

std::string pretrain_usage() {
  return "usage: gsup pretrain-backbone --out PREFIX [--log FILE] [options]\n"
         "\n"
         "Fits the low-resolution reconstruction backbone photometrically on\n"
         "the configured training scenes, freezes it, and writes a checkpoint\n"
         "(PREFIX.manifest + PREFIX.bin).\n"
         "\n"
         "flags:\n"
         "  --out PREFIX     checkpoint path prefix\n"
         "  --log FILE       write a step,loss CSV\n" +
         std::string(kConfigFlagsHelp) + kThreadsHelp + config_keys_help();
}

int run_pretrain(const Flags& f) {
  const RunConfig cfg = config_from_flags(f);
  const std::string out = require_flag(f, "out");
  const RasterSettings raster = raster_from_flags(f);

  std::ofstream log;
  std::ostream* log_ptr = nullptr;
  if (const std::string* path = find_flag(f, "log")) {
    log.open(*path);
    if (!log) throw Error("cannot open for writing: " + *path);
    log_ptr = &log;
  }

  ParamStore store(backbone_store_seed(cfg));
  const PretrainResult r = pretrain_backbone(cfg, store, log_ptr, raster);
  store.save(out);
  std::cout << "backbone loss " << fmt(r.first_loss) << " -> "
            << fmt(r.final_loss) << " over " << cfg.bb_pretrain_steps
            << " steps\n"
            << "reconstruction psnr " << std::fixed << std::setprecision(2)
            << r.val_psnr << " dB over the training views\n"
            << std::defaultfloat << "wrote " << out << ".manifest and " << out
            << ".bin\n";
  return 0;
}

// ---------------------------------------------------------------------------
// densify

std::string densify_usage() {
  return "usage: gsup densify --in SCENE.ply --out DENSE.ply [flags]\n"
         "\n"
         "Splits every sufficiently opaque Gaussian into six children placed\n"
         "along the parent's principal axes and writes the densified scene.\n"
         "\n"
         "flags:\n"
         "  --in FILE        input scene (PLY)\n"
         "  --out FILE       output scene (PLY)\n"
         "  --beta X         child offset in parent standard deviations "
         "(default 0.5)\n"
         "  --threshold X    opacity threshold for splitting (default 0.5)\n"
         "  --parents FILE   also write one parent index per output row\n";
}

int run_densify(const Flags& f) {
  DensifyConfig dc;
  if (const std::string* v = find_flag(f, "beta"))
    dc.beta = parse_float_flag("beta", *v);
  if (const std::string* v = find_flag(f, "threshold"))
    dc.opacity_threshold = parse_float_flag("threshold", *v);
  const std::string in = require_flag(f, "in");
  const std::string out = require_flag(f, "out");

  const GaussianScene scene = load_ply(in);
  const DensifyResult r = shuffle_split(scene, dc);
  save_ply(r.scene, out);
  if (const std::string* path = find_flag(f, "parents")) {
    std::ofstream sidecar(*path);
    if (!sidecar) throw Error("cannot open for writing: " + *path);
    for (std::int32_t p : r.parent_index) sidecar << p << "\n";
    if (!sidecar) throw Error("write failed: " + *path);
  }
  std::cout << scene.size() << " -> " << r.scene.size() << " primitives (beta "
            << fmt(dc.beta) << ", threshold " << fmt(dc.opacity_threshold)
            << ")\n"
            << "wrote " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// render

std::string render_usage() {
  return "usage: gsup render --scene S.ply --camera CAMS.txt --view N "
         "--out IMG.png [flags]\n"
         "\n"
         "Rasterizes the scene from camera record N of the camera file. An\n"
         "empty scene renders the background. Output size defaults to the\n"
         "camera record's stored width and height.\n"
         "\n"
         "flags:\n"
         "  --scene FILE     Gaussian scene (PLY)\n"
         "  --camera FILE    camera file written by gen-data\n"
         "  --view N         camera record index (default 0)\n"
         "  --out FILE       output image (PNG)\n"
         "  --width N        override output width\n"
         "  --height N       override output height\n"
         "  --background R,G,B  background color in [0,1] (default 0,0,0)\n" +
         std::string(kThreadsHelp);
}

int run_render(const Flags& f) {
  const std::string scene_path = require_flag(f, "scene");
  const std::string camera_path = require_flag(f, "camera");
  const std::string out = require_flag(f, "out");
  const long view = find_flag(f, "view")
                        ? parse_int_flag("view", *find_flag(f, "view"))
                        : 0;
  const RasterSettings raster = raster_from_flags(f);

  const GaussianScene scene = load_ply(scene_path);
  const std::vector<Camera> cams = load_cameras(camera_path);
  if (view < 0 || std::size_t(view) >= cams.size())
    throw UsageError("flag '--view': index " + std::to_string(view) +
                     " out of range (camera file has " +
                     std::to_string(cams.size()) + " record(s))");
  const Camera& cam = cams[std::size_t(view)];

  RenderTarget rt;
  rt.width = cam.width;
  rt.height = cam.height;
  if (const std::string* v = find_flag(f, "width"))
    rt.width = int(parse_int_flag("width", *v));
  if (const std::string* v = find_flag(f, "height"))
    rt.height = int(parse_int_flag("height", *v));
  if (rt.width < 1 || rt.height < 1)
    throw UsageError("output size must be positive");
  if (const std::string* v = find_flag(f, "background")) {
    std::string s = *v;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream parse(s);
    if (!(parse >> rt.background.x >> rt.background.y >> rt.background.z) ||
        !(parse >> std::ws).eof())
      throw UsageError("flag '--background': expected R,G,B, got '" + *v +
                       "'");
  }

  save_png(render(scene, cam, rt, raster), out);
  std::cout << "rendered " << scene.size() << " primitive(s) at " << rt.width
            << "x" << rt.height << " to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

std::string train_usage() {
  return "usage: gsup train --backbone PREFIX --out PREFIX [--log FILE] "
         "[options]\n"
         "\n"
         "Optimizes the mapping network on the configured training scenes\n"
         "against a frozen backbone checkpoint. If --out already names a\n"
         "checkpoint, training resumes from its recorded step; the run ends\n"
         "at train.steps either way and the checkpoint is rewritten.\n"
         "\n"
         "flags:\n"
         "  --backbone PREFIX  frozen backbone checkpoint prefix\n"
         "  --out PREFIX       mapping checkpoint path prefix\n"
         "  --log FILE         metrics CSV (appended to when resuming)\n" +
         std::string(kConfigFlagsHelp) + kThreadsHelp + config_keys_help();
}

int run_train(const Flags& f) {
  const RunConfig cfg = config_from_flags(f);
  const std::string backbone = require_flag(f, "backbone");
  const std::string out = require_flag(f, "out");
  const std::string log = flag_or(f, "log", "");
  const RasterSettings raster = raster_from_flags(f);

  ParamStore bb_store;
  bb_store.load(backbone);
  ParamStore map_store(mapping_store_seed(cfg));
  if (std::filesystem::exists(out + ".manifest")) {
    map_store.load(out);
    std::cout << "resuming from " << out << " at step " << map_store.step()
              << "\n";
  }
  if (map_store.step() >= cfg.train_steps) {
    std::cout << "checkpoint already at step " << map_store.step()
              << "; train.steps is " << cfg.train_steps << ", nothing to do\n";
    return 0;
  }

  const auto report = [&](int step, const StepStats& s) {
    if (step % cfg.train_log_interval == 0 || step + 1 == cfg.train_steps)
      std::cout << "step " << step << ": loss " << fmt(s.total) << " (mse "
                << fmt(s.mse) << ", perceptual " << fmt(s.perceptual)
                << ")\n";
  };
  const TrainResult r =
      train_mapping(cfg, bb_store, map_store, log, report, raster);
  map_store.save(out);
  std::cout << "ran " << r.steps_run << " step(s); smoothed loss "
            << fmt(r.last_smoothed) << "\n"
            << "wrote " << out << ".manifest and " << out << ".bin at step "
            << map_store.step() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / ablate

const std::vector<std::string>& all_variants() {
  static const std::vector<std::string> v = {
      "full",      "no-refine", "no-point-blocks",
      "no-offset", "scaffold",  "lr-upsampled"};
  return v;
}

std::string eval_usage() {
  return "usage: gsup eval --backbone PREFIX --checkpoint PREFIX "
         "[--out FILE] [options]\n"
         "\n"
         "Scores model variants on the held-out scenes (average PSNR and SSIM\n"
         "over every target view) and prints a table; --out also writes a\n"
         "variant,psnr,ssim,gaussians CSV.\n"
         "\n"
         "variants: full, no-refine, no-point-blocks, no-offset, scaffold,\n"
         "lr-upsampled (all by default).\n"
         "\n"
         "flags:\n"
         "  --backbone PREFIX    frozen backbone checkpoint prefix\n"
         "  --checkpoint PREFIX  mapping checkpoint prefix\n"
         "  --out FILE           write the results CSV here\n"
         "  --variants LIST      comma-separated subset to score\n" +
         std::string(kConfigFlagsHelp) + kThreadsHelp + config_keys_help();
}

int run_eval(const Flags& f) {
  const RunConfig cfg = config_from_flags(f);
  const RasterSettings raster = raster_from_flags(f);
  std::vector<std::string> variants = all_variants();
  if (const std::string* list = find_flag(f, "variants")) {
    variants.clear();
    std::istringstream parse(*list);
    std::string name;
    while (std::getline(parse, name, ',')) {
      if (std::find(all_variants().begin(), all_variants().end(), name) ==
          all_variants().end())
        throw UsageError("flag '--variants': unknown variant '" + name + "'");
      variants.push_back(name);
    }
    if (variants.empty())
      throw UsageError("flag '--variants': empty variant list");
  }

  ParamStore bb_store, map_store;
  bb_store.load(require_flag(f, "backbone"));
  map_store.load(require_flag(f, "checkpoint"));
  write_eval_outputs(evaluate_variants(variants, cfg, bb_store, map_store,
                                       raster),
                     f);
  return 0;
}

std::string ablate_usage() {
  return "usage: gsup ablate --backbone PREFIX --checkpoint PREFIX "
         "[--out FILE] [options]\n"
         "\n"
         "Runs the full evaluation sweep: every variant (full, no-refine,\n"
         "no-point-blocks, no-offset, scaffold, lr-upsampled), then the full\n"
         "model again with the image-branch upsampler forced to bilinear and\n"
         "to bicubic (rows full@bilinear, full@bicubic). Output matches eval.\n"
         "\n"
         "flags:\n"
         "  --backbone PREFIX    frozen backbone checkpoint prefix\n"
         "  --checkpoint PREFIX  mapping checkpoint prefix\n"
         "  --out FILE           write the results CSV here\n" +
         std::string(kConfigFlagsHelp) + kThreadsHelp + config_keys_help();
}

int run_ablate(const Flags& f) {
  const RunConfig cfg = config_from_flags(f);
  const RasterSettings raster = raster_from_flags(f);
  ParamStore bb_store, map_store;
  bb_store.load(require_flag(f, "backbone"));
  map_store.load(require_flag(f, "checkpoint"));

  std::vector<EvalRow> rows =
      evaluate_variants(all_variants(), cfg, bb_store, map_store, raster);
  for (const char* method : {"bilinear", "bicubic"}) {
    RunConfig swapped = cfg;
    swapped.eval_upsample = method;
    EvalRow row = evaluate_variants({"full"}, swapped, bb_store, map_store,
                                    raster)
                      .front();
    row.variant = std::string("full@") + method;
    rows.push_back(row);
  }
  write_eval_outputs(rows, f);
  return 0;
}

// ---------------------------------------------------------------------------
// inspect

std::string inspect_usage() {
  return "usage: gsup inspect --scene S.ply\n"
         "\n"
         "Prints primitive count, color degree, a 10-bin opacity histogram,\n"
         "the bounding box of the centers, and the scale range.\n";
}

int run_inspect(const Flags& f) {
  const GaussianScene scene = load_ply(require_flag(f, "scene"));
  std::cout << "primitives: " << scene.size() << "\n"
            << "sh degree: " << scene.sh_degree << "\n";

  std::array<long, 10> bins{};
  for (const GaussianPrimitive& p : scene.prims) {
    const int b = std::clamp(int(p.alpha * 10.0f), 0, 9);
    ++bins[std::size_t(b)];
  }
  std::cout << "opacity histogram:\n";
  for (int b = 0; b < 10; ++b)
    std::cout << "  [" << fmt(b / 10.0) << ", " << fmt((b + 1) / 10.0)
              << (b == 9 ? "]: " : "): ") << bins[std::size_t(b)] << "\n";

  if (scene.prims.empty()) {
    std::cout << "bounding box: empty\n";
    return 0;
  }
  Vec3<float> lo = scene.prims.front().mu, hi = lo;
  float smin = scene.prims.front().scale.x, smax = smin;
  for (const GaussianPrimitive& p : scene.prims) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p.mu[a]);
      hi[a] = std::max(hi[a], p.mu[a]);
      smin = std::min(smin, p.scale[a]);
      smax = std::max(smax, p.scale[a]);
    }
  }
  std::cout << "bounding box: (" << fmt(lo.x) << ", " << fmt(lo.y) << ", "
            << fmt(lo.z) << ") to (" << fmt(hi.x) << ", " << fmt(hi.y) << ", "
            << fmt(hi.z) << ")\n"
            << "scale range: [" << fmt(smin) << ", " << fmt(smax) << "]\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Dispatch

struct Command {
  const char* name;
  const char* summary;
  std::string (*usage)();
  int (*run)(const Flags&);
  std::vector<std::string> flags;
};

const std::vector<Command>& commands() {
  static const std::vector<Command> list = {
      {"gen-data", "write synthetic scenes, cameras, and renders",
       gen_data_usage, run_gen_data,
       {"out", "split", "config", "set", "threads"}},
      {"pretrain-backbone", "fit and freeze the low-resolution backbone",
       pretrain_usage, run_pretrain, {"out", "log", "config", "set",
                                      "threads"}},
      {"densify", "shuffle-split a scene into a denser scaffold",
       densify_usage, run_densify, {"in", "out", "beta", "threshold",
                                    "parents"}},
      {"render", "rasterize a scene from a stored camera", render_usage,
       run_render,
       {"scene", "camera", "view", "out", "width", "height", "background",
        "threads"}},
      {"train", "optimize the mapping network (resumable)", train_usage,
       run_train, {"backbone", "out", "log", "config", "set", "threads"}},
      {"eval", "score checkpoint variants on held-out scenes", eval_usage,
       run_eval,
       {"backbone", "checkpoint", "out", "variants", "config", "set",
        "threads"}},
      {"ablate", "evaluation sweep with upsampler-swap rows", ablate_usage,
       run_ablate,
       {"backbone", "checkpoint", "out", "config", "set", "threads"}},
      {"inspect", "print summary statistics of a scene", inspect_usage,
       run_inspect, {"scene"}},
  };
  return list;
}

std::string top_usage() {
  std::ostringstream out;
  out << "usage: gsup <command> [flags]\n\ncommands:\n";
  for (const Command& c : commands())
    out << "  " << std::left << std::setw(19) << c.name << c.summary << "\n";
  out << "\nRun 'gsup <command> --help' for per-command flags. Commands that\n"
         "take --config/--set read the same closed key set; overrides win\n"
         "over the file. The GSUP_THREADS environment variable caps\n"
         "rasterizer worker threads when --threads is not given.\n";
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "gsup: missing command\n\n" << top_usage();
    return 2;
  }
  const std::string name = argv[1];
  if (name == "--help" || name == "-h" || name == "help") {
    std::cout << top_usage();
    return 0;
  }
  const Command* cmd = nullptr;
  for (const Command& c : commands())
    if (name == c.name) cmd = &c;
  if (!cmd) {
    std::cerr << "gsup: unknown command '" << name << "'\n\n" << top_usage();
    return 2;
  }
  try {
    const Flags f = parse_flags(argc, argv, 2, cmd->flags);
    if (f.help) {
      std::cout << cmd->usage();
      return 0;
    }
    return cmd->run(f);
  } catch (const UsageError& e) {
    std::cerr << "gsup " << cmd->name << ": " << e.what() << "\n\n"
              << cmd->usage();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "gsup " << cmd->name << ": " << e.what() << "\n";
    return 1;
  }
}
