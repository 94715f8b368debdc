#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "drk/errors.hpp"
#include "drk/io.hpp"
#include "drk/mesh.hpp"
#include "drk/optimize.hpp"

namespace fs = std::filesystem;
using namespace drk;

namespace {

struct CommonFlags {
  int threads = 0;
  std::vector<double> background;
};

Vec3 background_or(const std::vector<double>& flag, const Vec3& fallback) {
  if (flag.size() == 3) return Vec3(flag[0], flag[1], flag[2]);
  return fallback;
}

std::vector<TrainView> load_views(const DatasetManifest& manifest, const Vec3& background) {
  std::vector<TrainView> views;
  views.reserve(manifest.frames.size());
  for (const auto& frame : manifest.frames) {
    TrainView v;
    v.image = read_image(frame.image_path, background);
    v.camera = frame.camera;
    views.push_back(std::move(v));
  }
  return views;
}

Image normal_to_image(const Image& normal) {
  Image out = normal;
  for (double& v : out.data) v = 0.5 * (v + 1.0);
  return out;
}

Image depth_to_image(const Image& depth) {
  double dmax = 0;
  for (double v : depth.data) dmax = std::max(dmax, v);
  Image out = depth;
  if (dmax > 0)
    for (double& v : out.data) v /= dmax;
  return out;
}

int run_fit(const std::string& dataset, const std::string& out_scene, const std::string& density,
            int steps, unsigned seed, int init_count, int sh_degree, const CommonFlags& common,
            const std::string& log_path, int checkpoint_interval) {
  const DatasetManifest manifest = load_dataset(dataset);
  const Vec3 bg = background_or(common.background,
                                manifest.synthetic ? Vec3::Ones() : Vec3::Zero());
  const std::vector<TrainView> views = load_views(manifest, bg);

  TrainConfig cfg;
  cfg.steps = steps;
  cfg.seed = seed;
  cfg.threads = common.threads;
  cfg.background = bg;
  cfg.max_sh_degree = sh_degree;
  cfg.densify_stop_step = steps / 2;
  cfg.checkpoint_interval = checkpoint_interval;
  cfg.checkpoint_path = out_scene;
  if (density == "s1") cfg.apply_density(DensityPreset::Sparse1);
  else if (density == "s2") cfg.apply_density(DensityPreset::Sparse2);
  else cfg.apply_density(DensityPreset::Default);

  // Initialize inside a box scaled from the camera rig.
  double mean_dist = 0;
  for (const auto& v : views) mean_dist += v.camera.position().norm();
  mean_dist /= static_cast<double>(views.size());
  const double r = std::max(0.1, 0.4 * mean_dist);
  std::mt19937_64 rng(seed);
  std::vector<RawDrkParams> init =
      init_random(Vec3(-r, -r, -r), Vec3(r, r, r), init_count, cfg.kernel.basis_count, sh_degree,
                  rng);

  TrainResult result = train(views, std::move(init), cfg);

  Scene scene;
  scene.basis_count = cfg.kernel.basis_count;
  scene.sh_degree = sh_degree;
  scene.params = std::move(result.params);
  save_scene(scene, out_scene);

  if (!log_path.empty()) {
    std::ofstream log(log_path);
    log << "step,loss,psnr,count\n";
    for (const MetricRow& row : result.log) {
      log << row.step << ',' << row.loss << ',';
      if (row.psnr >= 0) log << row.psnr;
      log << ',' << row.count << '\n';
    }
  }
  std::printf("fit: %zu primitives, final PSNR %.4f dB -> %s\n", scene.params.size(),
              result.final_psnr, out_scene.c_str());
  return 0;
}

int run_render(const std::string& scene_path, const std::string& manifest_path,
               const std::string& out_dir, bool with_depth, bool with_normal, int sh_degree,
               const CommonFlags& common) {
  const Scene scene = load_scene(scene_path);
  const DatasetManifest manifest = load_dataset(manifest_path);
  fs::create_directories(out_dir);

  RenderOptions opt;
  opt.threads = common.threads;
  opt.background = background_or(common.background,
                                 manifest.synthetic ? Vec3::Ones() : Vec3::Zero());
  opt.sh_degree = sh_degree >= 0 ? sh_degree : scene.sh_degree;

  std::vector<DrkPrimitive> prims;
  prims.reserve(scene.params.size());
  for (const auto& p : scene.params) prims.push_back(activate(p));

  for (size_t i = 0; i < manifest.frames.size(); ++i) {
    const FrameBuffers fb = render(prims, manifest.frames[i].camera, opt);
    const std::string stem = fs::path(manifest.frames[i].image_path).stem().string();
    write_image(out_dir + "/" + stem + ".png", quantize_8bit(fb.color));
    if (with_depth) write_image(out_dir + "/" + stem + "_depth.png", depth_to_image(fb.depth));
    if (with_normal) write_image(out_dir + "/" + stem + "_normal.png", normal_to_image(fb.normal));
  }
  std::printf("render: %zu frames -> %s\n", manifest.frames.size(), out_dir.c_str());
  return 0;
}

int run_convert(const std::string& obj_path, const std::string& out_scene,
                const std::vector<double>& shade) {
  std::vector<std::string> warnings;
  const Mesh mesh = load_mesh(obj_path, &warnings);
  std::vector<RawDrkParams> params = convert(mesh, 8, &warnings);
  for (const std::string& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (shade.size() == 4)
    shade_lambert(params, Vec3(shade[0], shade[1], shade[2]), shade[3]);

  Scene scene;
  scene.basis_count = 8;
  scene.sh_degree = 0;
  scene.params = std::move(params);
  save_scene(scene, out_scene);
  std::printf("convert: %zu faces -> %zu primitives -> %s\n", mesh.faces.size(),
              scene.params.size(), out_scene.c_str());
  return 0;
}

int run_metrics(const std::string& rendered_dir, const std::string& target_dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(rendered_dir)) {
    const std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".ppm") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw IoError("no images found in " + rendered_dir);

  double psnr_sum = 0, ssim_sum = 0;
  int counted = 0;
  std::printf("%-32s %10s %10s\n", "image", "PSNR", "SSIM");
  for (const std::string& name : names) {
    const std::string target = target_dir + "/" + name;
    if (!fs::exists(target)) continue;
    const Image a = read_image(rendered_dir + "/" + name);
    const Image b = read_image(target);
    const double p = psnr(a, b);
    const double s = ssim(a, b);
    std::printf("%-32s %10.4f %10.4f\n", name.c_str(), p, s);
    psnr_sum += p;
    ssim_sum += s;
    ++counted;
  }
  if (counted == 0) throw IoError("no matching image names between the two directories");
  std::printf("%-32s %10.4f %10.4f\n", "mean", psnr_sum / counted, ssim_sum / counted);
  return 0;
}

int run_gradcheck(unsigned seed, const CommonFlags& common) {
  std::mt19937_64 rng(seed);
  std::vector<RawDrkParams> raws =
      init_random(Vec3(-0.5, -0.5, 1.5), Vec3(0.5, 0.5, 2.5), 6, 8, 1, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& p : raws) {
    p.opacity_raw = sigmoid_inverse(0.3 + 0.5 * unit(rng));
    p.quat_raw = Vec4(1.0, 0.4 * (unit(rng) - 0.5), 0.4 * (unit(rng) - 0.5),
                      0.4 * (unit(rng) - 0.5));
    p.tau_raw = tau_raw_for(-0.05 + 0.7 * unit(rng));
    p.eta_raw = sigmoid_inverse(0.2 + 0.6 * unit(rng));
  }

  Camera cam;
  cam.width = 16;
  cam.height = 16;
  cam.fx = cam.fy = 16;
  cam.cx = cam.cy = 8;

  RenderOptions opt;
  opt.threads = common.threads;
  opt.sh_degree = 1;
  opt.background = Vec3(0.3, 0.3, 0.3);

  const GradCheckReport report = finite_diff_check(raws, cam, opt, seed + 1);
  std::printf("%-12s %14s\n", "class", "max rel error");
  for (int c = 0; c < 8; ++c)
    std::printf("%-12s %14.3e\n", param_class_name(static_cast<ParamClass>(c)),
                report.max_rel_error[c]);
  std::printf("checked %d scalars, skipped %d branch crossings, %d near-zero\n", report.checked,
              report.skipped_branch, report.skipped_small);
  const bool ok = report.worst() < 1e-2;
  std::printf("gradcheck: %s (worst %.3e)\n", ok ? "PASS" : "FAIL", report.worst());
  return ok ? 0 : 1;
}

int run_evalsort(int seeds, const CommonFlags& common) {
  (void)common;
  struct Mode {
    const char* name;
    PresortMode presort;
    bool cache;
  };
  const Mode modes[4] = {
      {"nearest-presort + cache", PresortMode::NearestDepth, true},
      {"center-presort + cache", PresortMode::CenterDepth, true},
      {"cache only", PresortMode::None, true},
      {"none", PresortMode::None, false},
  };
  double acc[4] = {0, 0, 0, 0}, tau[4] = {0, 0, 0, 0}, mae[4] = {0, 0, 0, 0};

  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(1000 + s);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<DrkPrimitive> prims;
    for (int i = 0; i < 60; ++i) {
      RawDrkParams raw = RawDrkParams::zeros(8, 0);
      raw.center_raw = Vec3(2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0, 1.5 + unit(rng));
      raw.quat_raw = Vec4(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
      raw.scale_raw.setConstant(std::log(0.4));
      for (int k = 0; k < 8; ++k) raw.scale_raw[k] += 2.5 * (unit(rng) - 0.5);
      for (int k = 0; k < 8; ++k) raw.angle_raw[k] = 2.0 * (unit(rng) - 0.5);
      raw.opacity_raw = sigmoid_inverse(0.6);
      raw.tau_raw = tau_raw_for(0.0);
      prims.push_back(activate(raw));
    }
    Camera cam;
    cam.width = 64;
    cam.height = 64;
    cam.fx = cam.fy = 48;
    cam.cx = cam.cy = 32;
    KernelConfig cfg;
    for (int m = 0; m < 4; ++m) {
      const SortingMetrics sm = eval_sorting(prims, cam, cfg, modes[m].presort, modes[m].cache);
      acc[m] += sm.accuracy;
      tau[m] += sm.kendall_tau;
      mae[m] += sm.mae;
    }
  }
  std::printf("%-26s %10s %12s %12s\n", "mode", "accuracy", "kendall-tau", "mae");
  for (int m = 0; m < 4; ++m)
    std::printf("%-26s %10.4f %12.4f %12.5f\n", modes[m].name, acc[m] / seeds, tau[m] / seeds,
                mae[m] / seeds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable radial kernel splatting toolkit"};
  app.require_subcommand(1);
  CommonFlags common;

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a scene to a posed image dataset");
  std::string fit_dataset, fit_out, fit_density = "default", fit_log;
  int fit_steps = 35000, fit_init = 2000, fit_sh = 2, fit_ckpt = 0;
  unsigned fit_seed = 0;
  fit->add_option("dataset", fit_dataset, "transform manifest (JSON)")->required();
  fit->add_option("output", fit_out, "output scene file")->required();
  fit->add_option("--density", fit_density, "density preset: default|s1|s2")
      ->check(CLI::IsMember({"default", "s1", "s2"}));
  fit->add_option("--steps", fit_steps, "optimization steps");
  fit->add_option("--seed", fit_seed, "random seed");
  fit->add_option("--init-count", fit_init, "initial primitive count");
  fit->add_option("--sh-degree", fit_sh, "maximum SH degree (0-3)");
  fit->add_option("--log", fit_log, "metric log CSV path");
  fit->add_option("--checkpoint-interval", fit_ckpt, "save a checkpoint scene every N steps");
  fit->add_option("--threads", common.threads, "worker threads (0 = auto)");
  fit->add_option("--background", common.background, "background RGB")->expected(3);

  // render
  auto* rnd = app.add_subcommand("render", "Render a scene from manifest cameras");
  std::string rnd_scene, rnd_manifest, rnd_out;
  bool rnd_depth = false, rnd_normal = false;
  int rnd_sh = -1;
  rnd->add_option("scene", rnd_scene, "scene file")->required();
  rnd->add_option("cameras", rnd_manifest, "transform manifest (JSON)")->required();
  rnd->add_option("output", rnd_out, "output directory")->required();
  rnd->add_flag("--depth", rnd_depth, "also write depth images");
  rnd->add_flag("--normal", rnd_normal, "also write normal images");
  rnd->add_option("--sh-degree", rnd_sh, "override SH degree");
  rnd->add_option("--threads", common.threads, "worker threads (0 = auto)");
  rnd->add_option("--background", common.background, "background RGB")->expected(3);

  // convert
  auto* cvt = app.add_subcommand("convert", "Convert an OBJ mesh to a scene");
  std::string cvt_obj, cvt_out;
  std::vector<double> cvt_shade;
  cvt->add_option("mesh", cvt_obj, "OBJ file")->required();
  cvt->add_option("output", cvt_out, "output scene file")->required();
  cvt->add_option("--shade", cvt_shade, "bake lambert shading: lx ly lz ambient")->expected(4);

  // metrics
  auto* met = app.add_subcommand("metrics", "PSNR/SSIM between two image directories");
  std::string met_rendered, met_target;
  met->add_option("rendered", met_rendered, "rendered image directory")->required();
  met->add_option("target", met_target, "target image directory")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient validation");
  unsigned gc_seed = 0;
  gc->add_option("--seed", gc_seed, "random seed");
  gc->add_option("--threads", common.threads, "worker threads (0 = auto)");

  // evalsort
  auto* es = app.add_subcommand("evalsort", "Sorting-order study across random scenes");
  int es_seeds = 20;
  es->add_option("--seeds", es_seeds, "number of random scenes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  const char* stage = "startup";
  try {
    if (*fit) {
      stage = "fit";
      return run_fit(fit_dataset, fit_out, fit_density, fit_steps, fit_seed, fit_init, fit_sh,
                     common, fit_log, fit_ckpt);
    }
    if (*rnd) {
      stage = "render";
      return run_render(rnd_scene, rnd_manifest, rnd_out, rnd_depth, rnd_normal, rnd_sh, common);
    }
    if (*cvt) {
      stage = "convert";
      return run_convert(cvt_obj, cvt_out, cvt_shade);
    }
    if (*met) {
      stage = "metrics";
      return run_metrics(met_rendered, met_target);
    }
    if (*gc) {
      stage = "gradcheck";
      return run_gradcheck(gc_seed, common);
    }
    if (*es) {
      stage = "evalsort";
      return run_evalsort(es_seeds, common);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [%s]: %s\n", stage, e.what());
    return 1;
  }
  return 2;
}
