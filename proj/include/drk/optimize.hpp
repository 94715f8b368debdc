#pragma once

#include <functional>
#include <random>

#include "drk/grad.hpp"

namespace drk {

double psnr(const Image& a, const Image& b);
double ssim(const Image& a, const Image& b);

// Photometric loss (1 - w) L1 + w (1 - SSIM) with its gradient image.
// Images below the 11-pixel SSIM window fall back to pure L1.
struct LossResult {
  double value = 0;
  Image d_color;
};
LossResult loss(const Image& rendered, const Image& target, double dssim_weight = 0.2);

// Density-control presets: (densify gradient threshold, opacity pruning
// threshold) pairs for the comparable / sparse-1 / sparse-2 configurations.
enum class DensityPreset { Default, Sparse1, Sparse2 };
struct DensityThresholds {
  double densify_grad = 5e-4;
  double prune_opacity = 5e-2;
};
DensityThresholds density_thresholds(DensityPreset preset);

struct TrainConfig {
  int steps = 35000;
  double lr_drk = 5e-3;          // tau, eta, angles, scales; decays to 1e-2x
  double lr_position = 1.6e-4;   // scaled by scene extent, same decay shape
  double lr_rotation = 1e-3;
  double lr_opacity = 5e-2;
  double lr_sh = 2.5e-3;         // higher bands at 1/20
  double densify_grad_threshold = 5e-4;
  double prune_opacity_threshold = 5e-2;
  int densify_interval = 100;
  int densify_start_step = 500;
  int densify_stop_step = 15000;
  double dssim_weight = 0.2;
  int sh_degree_warmup_interval = 1000;
  int max_sh_degree = 3;
  double percent_dense = 0.01;   // clone-vs-split size fraction of the extent
  bool freeze_eta_tau = false;   // frozen-Gaussian baseline
  bool freeze_angles = false;
  unsigned seed = 0;
  int threads = 1;
  Vec3 background = Vec3::Ones();
  KernelConfig kernel;
  int eval_interval = 250;       // PSNR logging cadence
  int checkpoint_interval = 0;   // 0 = off
  std::string checkpoint_path;

  void apply_density(DensityPreset preset) {
    const DensityThresholds t = density_thresholds(preset);
    densify_grad_threshold = t.densify_grad;
    prune_opacity_threshold = t.prune_opacity;
  }
};

// Adaptive-moment state, one row per primitive.
struct OptState {
  std::vector<RawDrkParams> m;
  std::vector<RawDrkParams> v;
  long step = 0;

  static OptState zeros_like(const std::vector<RawDrkParams>& params);
};

// Learning rate of a class at a step (exponential decay to 1e-2x for the
// kernel-shape group and position).
double learning_rate(const TrainConfig& cfg, ParamClass cls, long step, double scene_extent);

void adam_step(std::vector<RawDrkParams>& params, const std::vector<RawDrkParams>& grads,
               OptState& state, const TrainConfig& cfg, double scene_extent);

// Accumulated densification statistics between control steps.
struct DensifyStats {
  std::vector<double> screen_grad_accum;
  std::vector<int> touch_count;

  void resize(size_t n) {
    screen_grad_accum.assign(n, 0.0);
    touch_count.assign(n, 0);
  }
  void accumulate(const ParamGrads& grads);
};

// Clone/split above the screen-gradient threshold, prune below the opacity
// threshold; optimizer rows follow the primitive set.
void densify_and_prune(std::vector<RawDrkParams>& params, OptState& state,
                       const DensifyStats& stats, const TrainConfig& cfg, double scene_extent);

struct TrainView {
  Image image;
  Camera camera;
};

struct MetricRow {
  long step = 0;
  double loss = 0;
  double psnr = -1;  // negative when not evaluated this step
  long count = 0;
};

struct TrainResult {
  std::vector<RawDrkParams> params;
  std::vector<MetricRow> log;
  double final_psnr = 0;  // on quantized renders, mean over views
};

TrainResult train(const std::vector<TrainView>& views, std::vector<RawDrkParams> init,
                  const TrainConfig& cfg);

// Random initialization in a bounding box: uniform angles, k-nearest-neighbor
// scales, opacity raw at sigmoid^-1(0.1).
std::vector<RawDrkParams> init_random(const Vec3& bbox_min, const Vec3& bbox_max, int count,
                                      int basis_count, int sh_degree, std::mt19937_64& rng);

double scene_extent(const std::vector<RawDrkParams>& params);

}  // namespace drk
