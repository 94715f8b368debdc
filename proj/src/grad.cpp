#include "drk/grad.hpp"

#include <cmath>
#include <random>
#include <thread>
#include <unordered_map>

#include "drk/errors.hpp"

namespace drk {

namespace {
constexpr double kTwoPi = 2.0 * M_PI;
}

AlphaGrads backward_alpha(double u, double v, const DrkPrimitive& prim, double d_alpha) {
  const int k = prim.basis_count();
  AlphaGrads g;
  g.d_scales = VecX::Zero(k);
  g.d_angles = VecX::Zero(k);

  KernelEval ev;
  AlphaBranch br;
  alpha_detail(u, v, prim, &ev, &br);
  g.d_opacity = d_alpha * sharpen(ev.value, prim.tau);
  if (ev.at_center) return g;  // the limit value 1 carries no shape gradient

  g.d_tau = d_alpha * prim.opacity * sharpen_dtau(br.psi_branch, ev.value, prim.tau);
  if (ev.exp_clamped) return g;  // flat region of the clamped exponent

  // d alpha / d g along the active sharpening branch, then dg = -g/2 dQ.
  const double d_g = d_alpha * prim.opacity * sharpen_slope(br.psi_branch, prim.tau);
  const double d_q = d_g * (-0.5 * ev.value);

  const int lo = ev.bracket_lo, hi = ev.bracket_hi;
  const double s_lo = prim.scales[lo], s_hi = prim.scales[hi];
  const double eta = prim.eta;

  // Q = eta r1^2 + (1 - eta) r2^2 inv_sbar_sq.
  g.d_eta = d_q * (ev.r1 * ev.r1 - ev.r2_sq * ev.inv_sbar_sq);
  const double d_r1 = d_q * eta * 2.0 * ev.r1;
  const double d_r2sq = d_q * (1.0 - eta) * ev.inv_sbar_sq;
  const double d_invsbar = d_q * (1.0 - eta) * ev.r2_sq;

  // Cosine-blended scale term.
  const double c = std::cos(ev.delta);
  g.d_scales[lo] += d_invsbar * (-(1.0 + c) / (s_lo * s_lo * s_lo));
  g.d_scales[hi] += d_invsbar * (-(1.0 - c) / (s_hi * s_hi * s_hi));
  const double d_c = d_invsbar * (0.5 / (s_lo * s_lo) - 0.5 / (s_hi * s_hi));
  const double d_delta = d_c * (-std::sin(ev.delta));

  // Delta = (theta - a_lo) pi / (a_hi - a_lo); the wrap bracket uses
  // a_lo = theta_K - 2 pi, which shares the derivative of theta_K.
  double angle_lo = prim.angles[lo], angle_hi = prim.angles[hi];
  double theta = ev.theta;
  if (hi == 0) {  // wrap bracket (K, 1)
    angle_lo -= kTwoPi;
    if (theta > prim.angles[k - 1]) theta -= kTwoPi;
  }
  const double gap = angle_hi - angle_lo;
  const double d_theta_from_delta = d_delta * M_PI / gap;
  g.d_angles[lo] += d_delta * M_PI * (theta - angle_hi) / (gap * gap);
  g.d_angles[hi] += d_delta * (-M_PI) * (theta - angle_lo) / (gap * gap);

  // theta = atan2(v, u).
  const double r2sq_safe = std::max(ev.r2_sq, 1e-24);
  double d_u = d_theta_from_delta * (-v / r2sq_safe);
  double d_v = d_theta_from_delta * (u / r2sq_safe);

  // r2^2 = u^2 + v^2.
  d_u += d_r2sq * 2.0 * u;
  d_v += d_r2sq * 2.0 * v;

  // r1 = |a| + |b| with (a, b) = M^-1 (u, v), M = [e_lo e_hi].
  const double sa = br.sign_a, sb = br.sign_b;
  const Vec2 e_lo = prim.endpoint(lo);
  const Vec2 e_hi = prim.endpoint(hi);
  const double det = e_lo.x() * e_hi.y() - e_lo.y() * e_hi.x();
  auto minv_apply = [&](const Vec2& w) {
    return Vec2((e_hi.y() * w.x() - e_hi.x() * w.y()) / det,
                (-e_lo.y() * w.x() + e_lo.x() * w.y()) / det);
  };
  const Vec2 d_ab_du = minv_apply(Vec2(1, 0));
  const Vec2 d_ab_dv = minv_apply(Vec2(0, 1));
  d_u += d_r1 * (sa * d_ab_du.x() + sb * d_ab_du.y());
  d_v += d_r1 * (sa * d_ab_dv.x() + sb * d_ab_dv.y());

  // Column perturbations of M: d(a,b)/dp = -M^-1 (dM/dp) (a,b).
  const double ca = std::cos(prim.angles[lo]), sa_lo = std::sin(prim.angles[lo]);
  const double cb = std::cos(prim.angles[hi]), sb_hi = std::sin(prim.angles[hi]);
  g.d_scales[lo] += d_r1 * (-sa * ev.coef_a / s_lo);
  g.d_scales[hi] += d_r1 * (-sb * ev.coef_b / s_hi);
  const Vec2 d_ab_theta_lo = -ev.coef_a * minv_apply(Vec2(-s_lo * sa_lo, s_lo * ca));
  const Vec2 d_ab_theta_hi = -ev.coef_b * minv_apply(Vec2(-s_hi * sb_hi, s_hi * cb));
  g.d_angles[lo] += d_r1 * (sa * d_ab_theta_lo.x() + sb * d_ab_theta_lo.y());
  g.d_angles[hi] += d_r1 * (sa * d_ab_theta_hi.x() + sb * d_ab_theta_hi.y());

  g.d_u = d_u;
  g.d_v = d_v;
  return g;
}

PrimGrads PrimGrads::zeros(int k, int sh_terms) {
  PrimGrads g;
  g.d_scales = VecX::Zero(k);
  g.d_angles = VecX::Zero(k);
  g.d_sh = ShBlock::Zero(sh_terms, 3);
  return g;
}

void PrimGrads::add(const PrimGrads& o) {
  d_center += o.d_center;
  d_rot += o.d_rot;
  d_scales += o.d_scales;
  d_angles += o.d_angles;
  d_eta += o.d_eta;
  d_tau += o.d_tau;
  d_opacity += o.d_opacity;
  d_sh += o.d_sh;
}

Vec4 quat_rotation_backward(const Vec4& q, const Mat3& d_rot) {
  const double n = q.norm();
  if (n < 1e-12) throw DegenerateQuaternionError("quaternion norm below 1e-12");
  const Vec4 qh = q / n;
  const double w = qh[0], x = qh[1], y = qh[2], z = qh[3];

  Mat3 dw, dx, dy, dz;
  dw << 0, -z, y, z, 0, -x, -y, x, 0;
  dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;

  Vec4 d_qh;
  d_qh[0] = 2.0 * dw.cwiseProduct(d_rot).sum();
  d_qh[1] = 2.0 * dx.cwiseProduct(d_rot).sum();
  d_qh[2] = 2.0 * dy.cwiseProduct(d_rot).sum();
  d_qh[3] = 2.0 * dz.cwiseProduct(d_rot).sum();

  return (d_qh - qh * qh.dot(d_qh)) / n;
}

RawDrkParams activation_backward(const RawDrkParams& raw, const PrimGrads& g) {
  RawDrkParams out = RawDrkParams::zeros_like(raw);
  out.center_raw = g.d_center;
  out.quat_raw = quat_rotation_backward(raw.quat_raw, g.d_rot);
  for (int i = 0; i < raw.scale_raw.size(); ++i)
    out.scale_raw[i] = g.d_scales[i] * std::exp(raw.scale_raw[i]);
  const Eigen::MatrixXd jac = angle_activation_jacobian(raw.angle_raw);
  out.angle_raw = jac.transpose() * g.d_angles;
  const double eta = sigmoid(raw.eta_raw);
  out.eta_raw = g.d_eta * eta * (1.0 - eta);
  const double st = sigmoid(raw.tau_raw);
  out.tau_raw = g.d_tau * (kTauHigh - kTauLow) * st * (1.0 - st);
  const double o = sigmoid(raw.opacity_raw);
  out.opacity_raw = g.d_opacity * o * (1.0 - o);
  out.sh_raw = g.d_sh;
  return out;
}

namespace {

struct TilePartials {
  std::unordered_map<int, PrimGrads> per_prim;

  PrimGrads& get(int id, const DrkPrimitive& prim) {
    auto it = per_prim.find(id);
    if (it == per_prim.end())
      it = per_prim.emplace(id, PrimGrads::zeros(prim.basis_count(),
                                                 static_cast<int>(prim.sh.rows())))
               .first;
    return it->second;
  }
};

// Reverse pass over one pixel's recorded blend list, front to back, matching
// the forward order.
void backward_pixel(const std::vector<DrkPrimitive>& prims, const Camera& cam,
                    const RenderOptions& opt, const std::vector<BlendRecord>& recs,
                    const std::vector<Vec3>& proj_center, const std::vector<char>& /*has_proj*/,
                    int x, int y, const FrameGrad& fg, TilePartials* partials) {
  const int n = static_cast<int>(recs.size());
  Vec3 d_color = Vec3::Zero();
  double d_depth_px = 0, d_alpha_px = 0;
  Vec3 d_normal_px = Vec3::Zero();
  if (!fg.d_color.empty())
    for (int c = 0; c < 3; ++c) d_color[c] = fg.d_color.at(x, y, c);
  if (!fg.d_depth.empty()) d_depth_px = fg.d_depth.at(x, y, 0);
  if (!fg.d_normal.empty())
    for (int c = 0; c < 3; ++c) d_normal_px[c] = fg.d_normal.at(x, y, c);
  if (!fg.d_alpha.empty()) d_alpha_px = fg.d_alpha.at(x, y, 0);
  if (n == 0) return;  // only the background remains; it has no parameters

  const double px = x + 0.5, py = y + 0.5;
  const Ray ray = pixel_ray(cam, px, py);

  // Transmittance before each record and the per-record contribution weight.
  std::vector<double> trans(n + 1);
  trans[0] = 1.0;
  for (int i = 0; i < n; ++i) trans[i + 1] = trans[i] * (1.0 - recs[i].alpha);

  struct Cached {
    Vec3 rgb;
    bool clamped[3];
    Vec3 n_oriented;
    double sgn;
    double w;  // dC . rgb + dD r_t + dN . n + dA
  };
  std::vector<Cached> cached(n);
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const BlendRecord& r = recs[i];
    const DrkPrimitive& prim = prims[r.prim_id];
    Cached& c = cached[i];
    c.rgb = sh_eval_with_clamp(prim.sh, ray.dir, opt.sh_degree, c.clamped);
    c.sgn = ray.dir.dot(prim.normal()) < 0 ? 1.0 : -1.0;
    c.n_oriented = c.sgn * prim.normal();
    c.w = d_color.dot(c.rgb) + d_depth_px * r.depth + d_normal_px.dot(c.n_oriented) + d_alpha_px;
    total += trans[i] * r.alpha * c.w;
  }
  // Background term: color += T_final * bg.
  total += trans[n] * d_color.dot(opt.background);

  double rest = total;
  for (int i = 0; i < n; ++i) {
    const BlendRecord& r = recs[i];
    const DrkPrimitive& prim = prims[r.prim_id];
    const Cached& c = cached[i];
    const double t_i = trans[i];
    const double w_blend = t_i * r.alpha;

    rest -= w_blend * c.w;
    const double d_alpha_tilde = t_i * c.w - rest / (1.0 - r.alpha);

    PrimGrads& pg = partials->get(r.prim_id, prim);

    // Color path through the SH evaluation (linear; clamped channels gated).
    double basis[16];
    sh_basis(ray.dir, opt.sh_degree, basis);
    const int terms = std::min<int>(sh_coeff_count(opt.sh_degree), static_cast<int>(prim.sh.rows()));
    for (int ch = 0; ch < 3; ++ch) {
      if (c.clamped[ch]) continue;
      const double dc = w_blend * d_color[ch];
      if (dc == 0) continue;
      for (int t = 0; t < terms; ++t) pg.d_sh(t, ch) += dc * basis[t];
    }

    // Normal channel: n = sgn * R_z.
    if (!fg.d_normal.empty()) pg.d_rot.col(2) += w_blend * c.sgn * d_normal_px;

    const double rdz = ray.dir.dot(prim.normal());

    // Depth channel: r_t = (mu - r_o) . R_z / (r_d . R_z).
    if (d_depth_px != 0) {
      const double d_rt = w_blend * d_depth_px;
      const Vec3 hit_offset = ray.origin + r.depth * ray.dir - prim.center;
      pg.d_center += d_rt * prim.normal() / rdz;
      pg.d_rot.col(2) += d_rt * (-hit_offset / rdz);
    }

    // Alpha path: through the low-pass max gate. A record saturated at the
    // compositing clamp carries no alpha gradient.
    const bool alpha_clamped = r.alpha >= 1.0 - 1e-6 - 1e-12;
    if (alpha_clamped) {
      // color/depth/normal paths above still flow.
    } else if (r.lowpass_active) {
      // alpha = o * exp(-(dpw^2 + dph^2) / (2 cos^2 s_l^2)).
      const double cos_view = std::abs(rdz);
      const double dpw = px - proj_center[r.prim_id].x();
      const double dph = py - proj_center[r.prim_id].y();
      pg.d_opacity += d_alpha_tilde * r.alpha / prim.opacity;
      const double inv = 1.0 / (cos_view * cos_view * opt.kernel.lowpass_radius *
                                opt.kernel.lowpass_radius);
      const double d_dpw = d_alpha_tilde * r.alpha * (-dpw * inv);
      const double d_dph = d_alpha_tilde * r.alpha * (-dph * inv);
      const double d_cos = d_alpha_tilde * r.alpha * (dpw * dpw + dph * dph) * inv / cos_view;
      // dp = pixel - projected center.
      const Eigen::Matrix<double, 2, 3> jproj = projection_jacobian(cam, prim.center);
      pg.d_center += -(jproj.row(0).transpose() * d_dpw + jproj.row(1).transpose() * d_dph);
      const double sgn_rdz = rdz < 0 ? -1.0 : 1.0;
      pg.d_rot.col(2) += d_cos * sgn_rdz * ray.dir;
    } else {
      const AlphaGrads ag = backward_alpha(r.u, r.v, prim, d_alpha_tilde);
      pg.d_scales += ag.d_scales;
      pg.d_angles += ag.d_angles;
      pg.d_eta += ag.d_eta;
      pg.d_tau += ag.d_tau;
      pg.d_opacity += ag.d_opacity;

      // (u, v) and r_t chain to the center and rotation columns:
      // u = R_x . (i - mu), i = r_o + r_t r_d, r_t = (mu - r_o) . R_z / (r_d . R_z).
      const Vec3 hit_offset = ray.origin + r.depth * ray.dir - prim.center;  // i - mu
      const Vec3 rx = prim.rot.col(0), ry = prim.rot.col(1), rz = prim.rot.col(2);
      const Vec3 du_dmu = rz * (ray.dir.dot(rx) / rdz) - rx;
      const Vec3 dv_dmu = rz * (ray.dir.dot(ry) / rdz) - ry;
      pg.d_center += ag.d_u * du_dmu + ag.d_v * dv_dmu;
      pg.d_rot.col(0) += ag.d_u * hit_offset;
      pg.d_rot.col(1) += ag.d_v * hit_offset;
      // Through r_t inside i: du/dRz = -(i - mu)(r_d . R_x)/(r_d . R_z).
      pg.d_rot.col(2) += -(ag.d_u * ray.dir.dot(rx) + ag.d_v * ray.dir.dot(ry)) / rdz * hit_offset;
    }
  }
}

}  // namespace

ParamGrads backward_render(const std::vector<RawDrkParams>& raws,
                           const std::vector<DrkPrimitive>& prims, const Camera& cam,
                           const RenderOptions& opt, const ReplayBuffer& replay,
                           const FrameGrad& frame_grad) {
  if (replay.width != cam.width || replay.height != cam.height)
    throw ReplayMismatchError("replay buffer does not match the camera dimensions");
  if (raws.size() != prims.size())
    throw ReplayMismatchError("raw and activated primitive counts differ");

  std::vector<Vec3> proj_center(prims.size(), Vec3::Zero());
  std::vector<char> has_proj(prims.size(), 0);
  for (size_t i = 0; i < prims.size(); ++i)
    has_proj[i] = try_project_point(cam, prims[i].center, &proj_center[i]) ? 1 : 0;

  const int tile = 16;
  const int tiles_x = (cam.width + tile - 1) / tile;
  const int tiles_y = (cam.height + tile - 1) / tile;
  const int total_tiles = tiles_x * tiles_y;
  std::vector<TilePartials> partials(total_tiles);

  auto run_tile = [&](int t) {
    const int tx = t % tiles_x, ty = t / tiles_x;
    const int x1 = std::min(cam.width, (tx + 1) * tile);
    const int y1 = std::min(cam.height, (ty + 1) * tile);
    for (int y = ty * tile; y < y1; ++y)
      for (int x = tx * tile; x < x1; ++x)
        backward_pixel(prims, cam, opt, replay.pixels[y * cam.width + x], proj_center, has_proj,
                       x, y, frame_grad, &partials[t]);
  };

  const int threads = std::min(resolve_thread_count(opt.threads), std::max(1, total_tiles));
  if (threads <= 1) {
    for (int t = 0; t < total_tiles; ++t) run_tile(t);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      const int lo = static_cast<int>(static_cast<long>(total_tiles) * w / threads);
      const int hi = static_cast<int>(static_cast<long>(total_tiles) * (w + 1) / threads);
      pool.emplace_back([&, lo, hi] {
        for (int t = lo; t < hi; ++t) run_tile(t);
      });
    }
    for (auto& th : pool) th.join();
  }

  // Deterministic reduction: tiles in index order, primitives in id order.
  std::vector<PrimGrads> reduced(prims.size());
  std::vector<char> touched(prims.size(), 0);
  for (size_t i = 0; i < prims.size(); ++i)
    reduced[i] = PrimGrads::zeros(prims[i].basis_count(), static_cast<int>(prims[i].sh.rows()));
  std::vector<std::pair<int, const PrimGrads*>> order;
  for (int t = 0; t < total_tiles; ++t) {
    order.clear();
    order.reserve(partials[t].per_prim.size());
    for (const auto& [id, g] : partials[t].per_prim) order.emplace_back(id, &g);
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [id, g] : order) {
      reduced[id].add(*g);
      touched[id] = 1;
    }
  }

  ParamGrads out;
  out.raw.resize(prims.size());
  out.d_center_world.resize(prims.size());
  out.screen_grad.assign(prims.size(), 0.0);
  out.touched = touched;
  for (size_t i = 0; i < prims.size(); ++i) {
    out.raw[i] = activation_backward(raws[i], reduced[i]);
    out.d_center_world[i] = reduced[i].d_center;
    if (touched[i] && has_proj[i]) {
      const Eigen::Matrix<double, 2, 3> j = projection_jacobian(cam, prims[i].center);
      out.screen_grad[i] = (j * reduced[i].d_center).norm();
    }
  }
  return out;
}

namespace {

// Branch signature of a full render; finite differences are only trusted
// when the signature is stable across the perturbation.
uint64_t branch_signature(const std::vector<DrkPrimitive>& prims, const RenderOptions& opt,
                          const Camera& cam, const ReplayBuffer& replay) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](uint64_t x) {
    h ^= x;
    h *= 1099511628211ull;
  };
  for (int y = 0; y < replay.height; ++y) {
    for (int x = 0; x < replay.width; ++x) {
      const auto& recs = replay.pixels[y * replay.width + x];
      mix(0xabcdef);
      const Ray ray = pixel_ray(cam, x + 0.5, y + 0.5);
      for (const BlendRecord& r : recs) {
        AlphaBranch br;
        alpha_detail(r.u, r.v, prims[r.prim_id], nullptr, &br);
        bool clamped[3];
        sh_eval_with_clamp(prims[r.prim_id].sh, ray.dir, opt.sh_degree, clamped);
        const double sgn = ray.dir.dot(prims[r.prim_id].normal()) < 0 ? 1.0 : -1.0;
        mix(static_cast<uint64_t>(r.prim_id) + 1);
        mix(static_cast<uint64_t>(r.lowpass_active) | (static_cast<uint64_t>(br.psi_branch) << 1) |
            (static_cast<uint64_t>(br.bracket_lo + 1) << 4) |
            (static_cast<uint64_t>(br.sign_a + 1) << 12) |
            (static_cast<uint64_t>(br.sign_b + 1) << 14) |
            (static_cast<uint64_t>(br.exp_clamped) << 16) |
            (static_cast<uint64_t>(sgn > 0) << 17) | (static_cast<uint64_t>(clamped[0]) << 18) |
            (static_cast<uint64_t>(clamped[1]) << 19) | (static_cast<uint64_t>(clamped[2]) << 20) |
            (static_cast<uint64_t>(r.alpha >= 1.0 - 1e-6 - 1e-12) << 21));
      }
    }
  }
  return h;
}

}  // namespace

GradCheckReport finite_diff_check(const std::vector<RawDrkParams>& raws, const Camera& cam,
                                  const RenderOptions& opt, unsigned seed, double step) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Random linear functional over the buffers keeps dL/d(buffers) constant.
  FrameGrad fg;
  fg.d_color = Image(cam.width, cam.height, 3);
  fg.d_depth = Image(cam.width, cam.height, 1);
  fg.d_alpha = Image(cam.width, cam.height, 1);
  fg.d_normal = Image(cam.width, cam.height, 3);
  for (auto& v : fg.d_color.data) v = 2.0 * unit(rng) - 1.0;
  for (auto& v : fg.d_depth.data) v = 0.1 * (2.0 * unit(rng) - 1.0);
  for (auto& v : fg.d_alpha.data) v = 0.5 * (2.0 * unit(rng) - 1.0);
  for (auto& v : fg.d_normal.data) v = 0.1 * (2.0 * unit(rng) - 1.0);

  auto loss_of = [&](const std::vector<RawDrkParams>& rs, uint64_t* sig) {
    std::vector<DrkPrimitive> prims;
    prims.reserve(rs.size());
    for (const auto& r : rs) prims.push_back(activate(r));
    ReplayBuffer replay;
    const FrameBuffers fb = render(prims, cam, opt, &replay);
    if (sig) *sig = branch_signature(prims, opt, cam, replay);
    double loss = 0;
    for (size_t i = 0; i < fb.color.data.size(); ++i) loss += fb.color.data[i] * fg.d_color.data[i];
    for (size_t i = 0; i < fb.depth.data.size(); ++i) loss += fb.depth.data[i] * fg.d_depth.data[i];
    for (size_t i = 0; i < fb.alpha.data.size(); ++i) loss += fb.alpha.data[i] * fg.d_alpha.data[i];
    for (size_t i = 0; i < fb.normal.data.size(); ++i)
      loss += fb.normal.data[i] * fg.d_normal.data[i];
    return loss;
  };

  // Analytic gradients at the base point.
  std::vector<DrkPrimitive> prims;
  for (const auto& r : raws) prims.push_back(activate(r));
  ReplayBuffer replay;
  render(prims, cam, opt, &replay);
  const ParamGrads analytic = backward_render(raws, prims, cam, opt, replay, fg);
  uint64_t base_sig = 0;
  loss_of(raws, &base_sig);

  GradCheckReport report;
  std::vector<RawDrkParams> work = raws;
  for (size_t p = 0; p < raws.size(); ++p) {
    std::vector<std::pair<double*, ParamClass>> slots;
    for_each_scalar(work[p], [&](double& x, ParamClass c) { slots.emplace_back(&x, c); });
    std::vector<std::pair<const double*, ParamClass>> grad_slots;
    for_each_scalar(analytic.raw[p], [&](const double& x, ParamClass c) {
      grad_slots.emplace_back(&x, c);
    });
    for (size_t s = 0; s < slots.size(); ++s) {
      double* x = slots[s].first;
      const ParamClass cls = slots[s].second;
      const double saved = *x;
      uint64_t sig_plus = 0, sig_minus = 0;
      *x = saved + step;
      const double lp = loss_of(work, &sig_plus);
      *x = saved - step;
      const double lm = loss_of(work, &sig_minus);
      *x = saved;
      if (sig_plus != base_sig || sig_minus != base_sig) {
        ++report.skipped_branch;
        continue;
      }
      const double fd = (lp - lm) / (2.0 * step);
      const double an = *grad_slots[s].first;
      const double scale = std::max(std::abs(fd), std::abs(an));
      if (scale < 1e-7) {
        ++report.skipped_small;
        continue;
      }
      const double rel = std::abs(fd - an) / scale;
      const int idx = static_cast<int>(cls);
      report.max_rel_error[idx] = std::max(report.max_rel_error[idx], rel);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace drk
