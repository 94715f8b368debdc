#include "drk/optimize.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "drk/errors.hpp"
#include "drk/io.hpp"

namespace drk {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_same_shape(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionMismatchError("image dimensions differ");
}

std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> g{};
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - (kSsimWindow - 1) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Valid-region separable correlation of one channel plane.
struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<size_t>(w_) * h_, 0.0) {}
  double& at(int x, int y) { return v[static_cast<size_t>(y) * w + x]; }
  double at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
};

Plane correlate_valid(const Plane& img, const std::array<double, kSsimWindow>& g) {
  const int vw = img.w - kSsimWindow + 1, vh = img.h - kSsimWindow + 1;
  Plane tmp(vw, img.h);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < vw; ++x) {
      double s = 0;
      for (int i = 0; i < kSsimWindow; ++i) s += g[i] * img.at(x + i, y);
      tmp.at(x, y) = s;
    }
  Plane out(vw, vh);
  for (int y = 0; y < vh; ++y)
    for (int x = 0; x < vw; ++x) {
      double s = 0;
      for (int i = 0; i < kSsimWindow; ++i) s += g[i] * tmp.at(x, y + i);
      out.at(x, y) = s;
    }
  return out;
}

// Adjoint of correlate_valid: scatters a valid-region field back to image size.
Plane scatter_full(const Plane& f, int img_w, int img_h,
                   const std::array<double, kSsimWindow>& g) {
  Plane tmp(img_w, f.h);
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      const double val = f.at(x, y);
      if (val == 0) continue;
      for (int i = 0; i < kSsimWindow; ++i) tmp.at(x + i, y) += g[i] * val;
    }
  Plane out(img_w, img_h);
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < img_w; ++x) {
      const double val = tmp.at(x, y);
      if (val == 0) continue;
      for (int i = 0; i < kSsimWindow; ++i) out.at(x, y + i) += g[i] * val;
    }
  return out;
}

Plane channel_plane(const Image& img, int c) {
  Plane p(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p.at(x, y) = img.at(x, y, c);
  return p;
}

struct SsimChannelResult {
  double mean = 0;
  Plane d_x;  // gradient w.r.t. the first image, image-sized
};

SsimChannelResult ssim_channel(const Plane& x, const Plane& y, bool with_grad) {
  const auto g = ssim_kernel();
  Plane x2(x.w, x.h), y2(x.w, x.h), xy(x.w, x.h);
  for (size_t i = 0; i < x.v.size(); ++i) {
    x2.v[i] = x.v[i] * x.v[i];
    y2.v[i] = y.v[i] * y.v[i];
    xy.v[i] = x.v[i] * y.v[i];
  }
  const Plane mx = correlate_valid(x, g), my = correlate_valid(y, g);
  const Plane mxx = correlate_valid(x2, g), myy = correlate_valid(y2, g);
  const Plane mxy = correlate_valid(xy, g);

  const int vw = mx.w, vh = mx.h;
  const double inv_n = 1.0 / (static_cast<double>(vw) * vh);
  SsimChannelResult res;
  Plane f1(vw, vh), f2(vw, vh), f3(vw, vh);
  for (int j = 0; j < vh; ++j)
    for (int i = 0; i < vw; ++i) {
      const double ux = mx.at(i, j), uy = my.at(i, j);
      const double vx = mxx.at(i, j) - ux * ux;
      const double vy = myy.at(i, j) - uy * uy;
      const double vxy = mxy.at(i, j) - ux * uy;
      const double a1 = 2 * ux * uy + kC1, a2 = 2 * vxy + kC2;
      const double b1 = ux * ux + uy * uy + kC1, b2 = vx + vy + kC2;
      const double s = (a1 * a2) / (b1 * b2);
      res.mean += s;
      if (with_grad) {
        const double ds_dvx = -s / b2;
        const double ds_dvxy = 2 * a1 / (b1 * b2);
        const double ds_dux = 2 * uy * a2 / (b1 * b2) - 2 * ux * s / b1  // direct
                              - 2 * ux * ds_dvx                          // vx = mxx - ux^2
                              - uy * ds_dvxy;                            // vxy = mxy - ux uy
        f1.at(i, j) = ds_dux;
        f2.at(i, j) = ds_dvx;   // multiplies 2 x(p)
        f3.at(i, j) = ds_dvxy;  // multiplies y(p)
      }
    }
  res.mean *= inv_n;
  if (with_grad) {
    const Plane s1 = scatter_full(f1, x.w, x.h, g);
    const Plane s2 = scatter_full(f2, x.w, x.h, g);
    const Plane s3 = scatter_full(f3, x.w, x.h, g);
    res.d_x = Plane(x.w, x.h);
    for (int j = 0; j < x.h; ++j)
      for (int i = 0; i < x.w; ++i)
        res.d_x.at(i, j) = inv_n * (s1.at(i, j) + 2.0 * x.at(i, j) * s2.at(i, j) +
                                    y.at(i, j) * s3.at(i, j));
  }
  return res;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_same_shape(a, b);
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse < 1e-10) return 100.0;
  return -10.0 * std::log10(mse);
}

double ssim(const Image& a, const Image& b) {
  check_same_shape(a, b);
  if (a.width < kSsimWindow || a.height < kSsimWindow)
    throw DimensionMismatchError("image smaller than the SSIM window");
  double total = 0;
  for (int c = 0; c < a.channels; ++c)
    total += ssim_channel(channel_plane(a, c), channel_plane(b, c), false).mean;
  return total / a.channels;
}

LossResult loss(const Image& rendered, const Image& target, double dssim_weight) {
  check_same_shape(rendered, target);
  const bool use_ssim =
      dssim_weight > 0 && rendered.width >= kSsimWindow && rendered.height >= kSsimWindow;
  const double w = use_ssim ? dssim_weight : 0.0;

  LossResult res;
  res.d_color = Image(rendered.width, rendered.height, rendered.channels);
  const double inv_n = 1.0 / static_cast<double>(rendered.data.size());
  double l1 = 0;
  for (size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    l1 += std::abs(d);
    res.d_color.data[i] = (1.0 - w) * inv_n * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
  }
  l1 *= inv_n;
  res.value = (1.0 - w) * l1;

  if (use_ssim) {
    double mean_ssim = 0;
    for (int c = 0; c < rendered.channels; ++c) {
      const SsimChannelResult sc =
          ssim_channel(channel_plane(rendered, c), channel_plane(target, c), true);
      mean_ssim += sc.mean;
      const double scale = -w / rendered.channels;  // d/dx of w * (1 - mean ssim)
      for (int y = 0; y < rendered.height; ++y)
        for (int x = 0; x < rendered.width; ++x)
          res.d_color.at(x, y, c) += scale * sc.d_x.at(x, y);
    }
    mean_ssim /= rendered.channels;
    res.value += w * (1.0 - mean_ssim);
  }
  return res;
}

DensityThresholds density_thresholds(DensityPreset preset) {
  switch (preset) {
    case DensityPreset::Default: return {5e-4, 5e-2};
    case DensityPreset::Sparse1: return {1e-3, 5e-2};
    case DensityPreset::Sparse2: return {2e-3, 1e-1};
  }
  return {};
}

OptState OptState::zeros_like(const std::vector<RawDrkParams>& params) {
  OptState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.push_back(RawDrkParams::zeros_like(p));
    s.v.push_back(RawDrkParams::zeros_like(p));
  }
  return s;
}

double learning_rate(const TrainConfig& cfg, ParamClass cls, long step, double extent) {
  const double t = cfg.steps > 0 ? std::min(1.0, static_cast<double>(step) / cfg.steps) : 1.0;
  const double decay = std::pow(1e-2, t);  // down to 1e-2x at the end of training
  switch (cls) {
    case ParamClass::Center: return cfg.lr_position * extent * decay;
    case ParamClass::Quaternion: return cfg.lr_rotation;
    case ParamClass::Scale:
    case ParamClass::Angle:
    case ParamClass::Eta:
    case ParamClass::Tau: return cfg.lr_drk * decay;
    case ParamClass::Opacity: return cfg.lr_opacity;
    case ParamClass::Sh: return cfg.lr_sh;
  }
  return 0;
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;

inline void adam_scalar(double& p, double g, double& m, double& v, double lr, double bc1,
                        double bc2) {
  m = kBeta1 * m + (1.0 - kBeta1) * g;
  v = kBeta2 * v + (1.0 - kBeta2) * g * g;
  const double mh = m / bc1;
  const double vh = v / bc2;
  p -= lr * mh / (std::sqrt(vh) + kAdamEps);
}

}  // namespace

void adam_step(std::vector<RawDrkParams>& params, const std::vector<RawDrkParams>& grads,
               OptState& state, const TrainConfig& cfg, double extent) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw DimensionMismatchError("optimizer shapes out of sync");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  const long sched_step = state.step;

  double lrs[8];
  for (int c = 0; c < 8; ++c)
    lrs[c] = learning_rate(cfg, static_cast<ParamClass>(c), sched_step, extent);
  if (cfg.freeze_eta_tau) {
    lrs[static_cast<int>(ParamClass::Eta)] = 0;
    lrs[static_cast<int>(ParamClass::Tau)] = 0;
  }
  if (cfg.freeze_angles) lrs[static_cast<int>(ParamClass::Angle)] = 0;
  const double lr_sh_rest = lrs[static_cast<int>(ParamClass::Sh)] / 20.0;

  for (size_t i = 0; i < params.size(); ++i) {
    RawDrkParams& p = params[i];
    const RawDrkParams& g = grads[i];
    RawDrkParams& m = state.m[i];
    RawDrkParams& v = state.v[i];
    for (int j = 0; j < 3; ++j)
      adam_scalar(p.center_raw[j], g.center_raw[j], m.center_raw[j], v.center_raw[j],
                  lrs[static_cast<int>(ParamClass::Center)], bc1, bc2);
    for (int j = 0; j < 4; ++j)
      adam_scalar(p.quat_raw[j], g.quat_raw[j], m.quat_raw[j], v.quat_raw[j],
                  lrs[static_cast<int>(ParamClass::Quaternion)], bc1, bc2);
    for (int j = 0; j < p.scale_raw.size(); ++j)
      adam_scalar(p.scale_raw[j], g.scale_raw[j], m.scale_raw[j], v.scale_raw[j],
                  lrs[static_cast<int>(ParamClass::Scale)], bc1, bc2);
    for (int j = 0; j < p.angle_raw.size(); ++j)
      adam_scalar(p.angle_raw[j], g.angle_raw[j], m.angle_raw[j], v.angle_raw[j],
                  lrs[static_cast<int>(ParamClass::Angle)], bc1, bc2);
    adam_scalar(p.eta_raw, g.eta_raw, m.eta_raw, v.eta_raw, lrs[static_cast<int>(ParamClass::Eta)],
                bc1, bc2);
    adam_scalar(p.tau_raw, g.tau_raw, m.tau_raw, v.tau_raw, lrs[static_cast<int>(ParamClass::Tau)],
                bc1, bc2);
    adam_scalar(p.opacity_raw, g.opacity_raw, m.opacity_raw, v.opacity_raw,
                lrs[static_cast<int>(ParamClass::Opacity)], bc1, bc2);
    for (int r = 0; r < p.sh_raw.rows(); ++r) {
      const double lr = r == 0 ? lrs[static_cast<int>(ParamClass::Sh)] : lr_sh_rest;
      for (int c = 0; c < 3; ++c)
        adam_scalar(p.sh_raw(r, c), g.sh_raw(r, c), m.sh_raw(r, c), v.sh_raw(r, c), lr, bc1, bc2);
    }
  }
}

void DensifyStats::accumulate(const ParamGrads& grads) {
  if (screen_grad_accum.size() != grads.screen_grad.size())
    throw DimensionMismatchError("densify stats out of sync with the primitive set");
  for (size_t i = 0; i < grads.screen_grad.size(); ++i) {
    if (grads.touched[i]) {
      screen_grad_accum[i] += grads.screen_grad[i];
      touch_count[i] += 1;
    }
  }
}

void densify_and_prune(std::vector<RawDrkParams>& params, OptState& state,
                       const DensifyStats& stats, const TrainConfig& cfg, double extent) {
  const size_t n = params.size();
  std::vector<RawDrkParams> next;
  std::vector<RawDrkParams> next_m, next_v;
  next.reserve(n + n / 2);
  next_m.reserve(next.capacity());
  next_v.reserve(next.capacity());

  auto keep = [&](size_t i) {
    next.push_back(params[i]);
    next_m.push_back(state.m[i]);
    next_v.push_back(state.v[i]);
  };
  auto add_new = [&](const RawDrkParams& p) {
    next.push_back(p);
    next_m.push_back(RawDrkParams::zeros_like(p));
    next_v.push_back(RawDrkParams::zeros_like(p));
  };

  for (size_t i = 0; i < n; ++i) {
    const double opacity = sigmoid(params[i].opacity_raw);
    if (opacity < cfg.prune_opacity_threshold) continue;  // pruned

    const double mean_grad =
        stats.touch_count[i] > 0 ? stats.screen_grad_accum[i] / stats.touch_count[i] : 0.0;
    if (mean_grad <= cfg.densify_grad_threshold) {
      keep(i);
      continue;
    }

    const VecX scales = params[i].scale_raw.array().exp();
    int longest = 0;
    for (int k = 1; k < scales.size(); ++k)
      if (scales[k] > scales[longest]) longest = k;
    const double s_max = scales[longest];

    if (s_max <= cfg.percent_dense * extent) {
      // Clone: original keeps its state, the copy starts fresh.
      keep(i);
      add_new(params[i]);
    } else {
      // Split along the longest basis: halve all scales, offset the children.
      const DrkPrimitive prim = activate(params[i]);
      const double a = prim.angles[longest];
      const Vec3 dir = std::cos(a) * prim.axis_x() + std::sin(a) * prim.axis_y();
      for (int child = 0; child < 2; ++child) {
        RawDrkParams c = params[i];
        c.scale_raw.array() -= std::log(2.0);
        c.center_raw += (child == 0 ? 1.0 : -1.0) * 0.25 * s_max * dir;
        add_new(c);
      }
    }
  }

  params = std::move(next);
  state.m = std::move(next_m);
  state.v = std::move(next_v);
}

double scene_extent(const std::vector<RawDrkParams>& params) {
  if (params.empty()) return 1.0;
  Vec3 lo = params[0].center_raw, hi = params[0].center_raw;
  for (const auto& p : params) {
    lo = lo.cwiseMin(p.center_raw);
    hi = hi.cwiseMax(p.center_raw);
  }
  return std::max(1e-6, 0.5 * (hi - lo).norm());
}

TrainResult train(const std::vector<TrainView>& views, std::vector<RawDrkParams> init,
                  const TrainConfig& cfg) {
  if (views.empty()) throw Error("training needs at least one posed view");
  TrainResult result;
  std::vector<RawDrkParams>& params = init;
  OptState state = OptState::zeros_like(params);
  DensifyStats stats;
  stats.resize(params.size());
  std::mt19937_64 rng(cfg.seed);
  const double extent = scene_extent(params);

  RenderOptions ropt;
  ropt.kernel = cfg.kernel;
  ropt.background = cfg.background;
  ropt.threads = cfg.threads;

  for (int step = 0; step < cfg.steps; ++step) {
    const size_t view_idx = views.size() == 1 ? 0 : rng() % views.size();
    const TrainView& view = views[view_idx];

    ropt.sh_degree = cfg.sh_degree_warmup_interval > 0
                         ? std::min(cfg.max_sh_degree, step / cfg.sh_degree_warmup_interval)
                         : cfg.max_sh_degree;

    std::vector<DrkPrimitive> prims;
    prims.reserve(params.size());
    for (const auto& p : params) prims.push_back(activate(p));

    ReplayBuffer replay;
    const FrameBuffers fb = render(prims, view.camera, ropt, &replay);
    const LossResult l = loss(fb.color, view.image, cfg.dssim_weight);

    FrameGrad fg;
    fg.d_color = l.d_color;
    const ParamGrads grads = backward_render(params, prims, view.camera, ropt, replay, fg);
    stats.accumulate(grads);
    adam_step(params, grads.raw, state, cfg, extent);

    MetricRow row;
    row.step = step;
    row.loss = l.value;
    row.count = static_cast<long>(params.size());
    if (cfg.eval_interval > 0 && (step % cfg.eval_interval == 0 || step + 1 == cfg.steps))
      row.psnr = psnr(quantize_8bit(fb.color), view.image);
    result.log.push_back(row);

    const int done = step + 1;
    if (cfg.densify_interval > 0 && done % cfg.densify_interval == 0 &&
        done >= cfg.densify_start_step && done <= cfg.densify_stop_step) {
      densify_and_prune(params, state, stats, cfg, extent);
      stats.resize(params.size());
    } else if (params.size() != stats.screen_grad_accum.size()) {
      stats.resize(params.size());
    }

    if (cfg.checkpoint_interval > 0 && !cfg.checkpoint_path.empty() && !params.empty() &&
        done % cfg.checkpoint_interval == 0 && done < cfg.steps) {
      Scene checkpoint;
      checkpoint.basis_count = params[0].basis_count();
      checkpoint.sh_degree =
          static_cast<int>(std::lround(std::sqrt(params[0].sh_terms()))) - 1;
      checkpoint.params = params;
      save_scene(checkpoint, cfg.checkpoint_path + "." + std::to_string(done));
    }
  }

  // Final quality on quantized renders, averaged over the views.
  {
    std::vector<DrkPrimitive> prims;
    for (const auto& p : params) prims.push_back(activate(p));
    ropt.sh_degree = cfg.max_sh_degree;
    double total = 0;
    for (const auto& view : views) {
      const FrameBuffers fb = render(prims, view.camera, ropt, nullptr);
      total += psnr(quantize_8bit(fb.color), view.image);
    }
    result.final_psnr = total / static_cast<double>(views.size());
  }
  result.params = std::move(params);
  return result;
}

std::vector<RawDrkParams> init_random(const Vec3& bbox_min, const Vec3& bbox_max, int count,
                                      int basis_count, int sh_degree, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> centers(count);
  for (auto& c : centers)
    for (int j = 0; j < 3; ++j)
      c[j] = bbox_min[j] + (bbox_max[j] - bbox_min[j]) * unit(rng);

  std::vector<RawDrkParams> out(count);
  const double sh0 = 0.28209479177387814;
  for (int i = 0; i < count; ++i) {
    // Mean distance to the three nearest neighbors sets the initial scale.
    std::vector<double> d2;
    d2.reserve(count - 1);
    for (int j = 0; j < count; ++j)
      if (j != i) d2.push_back((centers[j] - centers[i]).squaredNorm());
    double knn = 0.1;
    if (!d2.empty()) {
      const int kn = std::min<size_t>(3, d2.size());
      std::partial_sort(d2.begin(), d2.begin() + kn, d2.end());
      double acc = 0;
      for (int k = 0; k < kn; ++k) acc += std::sqrt(d2[k]);
      knn = std::max(1e-4, acc / kn);
    }

    RawDrkParams p = RawDrkParams::zeros(basis_count, sh_degree);
    p.center_raw = centers[i];
    p.quat_raw = Vec4(1, 0, 0, 0);
    p.scale_raw.setConstant(std::log(knn));
    p.angle_raw.setZero();  // uniform angles
    p.eta_raw = 0.0;        // eta = 0.5
    p.tau_raw = tau_raw_for(0.0);
    p.opacity_raw = sigmoid_inverse(0.1);
    for (int c = 0; c < 3; ++c) p.sh_raw(0, c) = (0.2 + 0.6 * unit(rng) - 0.5) / sh0;
    out[i] = p;
  }
  return out;
}

}  // namespace drk
