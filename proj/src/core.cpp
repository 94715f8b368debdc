#include "drk/core.hpp"

#include <Eigen/LU>
#include <cassert>
#include <cmath>

#include "drk/errors.hpp"
#include "drk/geometry.hpp"

namespace drk {

namespace {
constexpr double kTwoPi = 2.0 * M_PI;
constexpr double kThreeSigmaLevel = 1.2340980408667956e-4;  // exp(-9)
}  // namespace

bool RawDrkParams::all_finite() const {
  bool ok = true;
  for_each_scalar(*this, [&](const double& x, ParamClass) { ok = ok && std::isfinite(x); });
  return ok;
}

RawDrkParams RawDrkParams::zeros(int k, int sh_degree) {
  RawDrkParams p;
  p.scale_raw = VecX::Zero(k);
  p.angle_raw = VecX::Zero(k);
  p.sh_raw = ShBlock::Zero(sh_coeff_count(sh_degree), 3);
  return p;
}

RawDrkParams RawDrkParams::zeros_like(const RawDrkParams& shape) {
  RawDrkParams p;
  p.quat_raw.setZero();
  p.scale_raw = VecX::Zero(shape.scale_raw.size());
  p.angle_raw = VecX::Zero(shape.angle_raw.size());
  p.sh_raw = ShBlock::Zero(shape.sh_raw.rows(), 3);
  return p;
}

const char* param_class_name(ParamClass c) {
  switch (c) {
    case ParamClass::Center: return "center";
    case ParamClass::Quaternion: return "quaternion";
    case ParamClass::Scale: return "scale";
    case ParamClass::Angle: return "angle";
    case ParamClass::Eta: return "eta";
    case ParamClass::Tau: return "tau";
    case ParamClass::Opacity: return "opacity";
    case ParamClass::Sh: return "sh";
  }
  return "?";
}

bool DrkPrimitive::valid(std::string* why) const {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  const int k = basis_count();
  if (k < 3) return fail("fewer than 3 radial bases");
  if (angles.size() != k) return fail("scale/angle size mismatch");
  for (int i = 0; i < k; ++i)
    if (!(scales[i] > 0)) return fail("non-positive scale");
  double prev = 0;
  for (int i = 0; i < k; ++i) {
    if (!(angles[i] > prev)) return fail("angles not strictly increasing from 0");
    if (!(angles[i] - prev < M_PI)) return fail("angular gap not below pi");
    prev = angles[i];
  }
  if (std::abs(angles[k - 1] - kTwoPi) > 1e-9) return fail("last angle must be 2*pi");
  if ((rot.transpose() * rot - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    return fail("rotation not orthonormal");
  if (std::abs(rot.determinant() - 1.0) > 1e-6) return fail("rotation determinant not +1");
  if (!(eta >= 0 && eta < 1)) return fail("eta outside [0,1)");  // 0 exact for the Gaussian case
  if (!(tau > kTauLow && tau < kTauHigh)) return fail("tau outside (-0.1, 0.99)");
  if (!(opacity > 0 && opacity < 1)) return fail("opacity outside (0,1)");
  return true;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double sigmoid_inverse(double y) {
  assert(y > 0 && y < 1);
  return std::log(y / (1.0 - y));
}

double tau_raw_for(double tau) { return sigmoid_inverse((tau - kTauLow) / (kTauHigh - kTauLow)); }

VecX angle_activation(const VecX& angle_raw) {
  const int k = static_cast<int>(angle_raw.size());
  if (k < 3) throw Error("angle activation needs K >= 3");
  const double residual = 1.0 / (k - 2);
  VecX steps(k);
  // The sigmoid saturates to exactly 0/1 in double precision around |x|>37,
  // which would let a gap reach pi exactly and degenerate the endpoint
  // matrix; keep the steps strictly inside the open interval.
  for (int i = 0; i < k; ++i)
    steps[i] = std::clamp(sigmoid(angle_raw[i]), 1e-9, 1.0 - 1e-9) + residual;
  double total = 0;
  VecX theta(k);
  for (int i = 0; i < k; ++i) {
    total += steps[i];
    theta[i] = total;
  }
  theta *= kTwoPi / total;
  theta[k - 1] = kTwoPi;  // exact despite rounding
  return theta;
}

Eigen::MatrixXd angle_activation_jacobian(const VecX& angle_raw) {
  const int k = static_cast<int>(angle_raw.size());
  const double residual = 1.0 / (k - 2);
  VecX steps(k), dstep(k), cum(k);
  double total = 0;
  for (int i = 0; i < k; ++i) {
    const double s = sigmoid(angle_raw[i]);
    const bool clamped = s < 1e-9 || s > 1.0 - 1e-9;
    steps[i] = std::clamp(s, 1e-9, 1.0 - 1e-9) + residual;
    dstep[i] = clamped ? 0.0 : s * (1.0 - s);
    total += steps[i];
    cum[i] = total;
  }
  Eigen::MatrixXd jac(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double indicator = (j <= i) ? 1.0 : 0.0;
      jac(i, j) = kTwoPi / total * (indicator - cum[i] / total) * dstep[j];
    }
  jac.row(k - 1).setZero();  // theta_K is pinned at 2*pi
  return jac;
}

DrkPrimitive activate(const RawDrkParams& raw) {
  if (!raw.all_finite()) throw NonFiniteError("raw parameters contain NaN/Inf");
  if (raw.basis_count() < 3) throw Error("K must be at least 3");
  DrkPrimitive p;
  p.center = raw.center_raw;
  p.rot = quat_to_rotation(raw.quat_raw);
  p.scales = raw.scale_raw.array().exp();
  p.angles = angle_activation(raw.angle_raw);
  p.eta = sigmoid(raw.eta_raw);
  p.tau = kTauLow + (kTauHigh - kTauLow) * sigmoid(raw.tau_raw);
  p.opacity = sigmoid(raw.opacity_raw);
  p.sh = raw.sh_raw;
  return p;
}

KernelEval eval_kernel_detail(double u, double v, const DrkPrimitive& prim) {
  KernelEval ev;
  ev.r2_sq = u * u + v * v;
  if (ev.r2_sq == 0) {
    ev.at_center = true;
    ev.value = 1.0;
    return ev;
  }
  const int k = prim.basis_count();
  // Polar angle over the full circle, mapped to (0, 2*pi].
  double theta = std::atan2(v, u);
  if (theta <= 0) theta += kTwoPi;
  ev.theta = theta;

  // Bracketing bases: theta_lo < theta <= theta_hi with wrap-around K -> 1.
  int lo, hi;
  double angle_lo, angle_hi;
  if (theta <= prim.angles[0] || theta > prim.angles[k - 1]) {
    lo = k - 1;
    hi = 0;
    angle_lo = prim.angles[k - 1] - kTwoPi;
    angle_hi = prim.angles[0];
    if (theta > prim.angles[k - 1]) theta -= kTwoPi;
  } else {
    hi = static_cast<int>(std::lower_bound(prim.angles.data(), prim.angles.data() + k, theta) -
                          prim.angles.data());
    lo = hi - 1;
    angle_lo = prim.angles[lo];
    angle_hi = prim.angles[hi];
  }
  ev.bracket_lo = lo;
  ev.bracket_hi = hi;
  ev.delta = (theta - angle_lo) * M_PI / (angle_hi - angle_lo);

  const double c = std::cos(ev.delta);
  const double s_lo = prim.scales[lo], s_hi = prim.scales[hi];
  ev.inv_sbar_sq = (1.0 + c) / (2.0 * s_lo * s_lo) + (1.0 - c) / (2.0 * s_hi * s_hi);

  // Coordinates in the endpoint basis (e_lo, e_hi); their L1 norm maps the
  // segment between adjacent endpoints to 1.
  const Vec2 e_lo = prim.endpoint(lo);
  const Vec2 e_hi = prim.endpoint(hi);
  const double det = e_lo.x() * e_hi.y() - e_lo.y() * e_hi.x();
  if (std::abs(det) < 1e-12) throw DegenerateBasisError("adjacent endpoints nearly collinear");
  ev.coef_a = (e_hi.y() * u - e_hi.x() * v) / det;
  ev.coef_b = (-e_lo.y() * u + e_lo.x() * v) / det;
  ev.r1 = std::abs(ev.coef_a) + std::abs(ev.coef_b);

  double exponent =
      -0.5 * (prim.eta * ev.r1 * ev.r1 + (1.0 - prim.eta) * ev.r2_sq * ev.inv_sbar_sq);
  if (exponent < kMinExponent) {
    exponent = kMinExponent;
    ev.exp_clamped = true;
  }
  ev.value = std::exp(exponent);
  return ev;
}

double eval_kernel(double u, double v, const DrkPrimitive& prim) {
  return eval_kernel_detail(u, v, prim).value;
}

int sharpen_branch(double g, double tau) {
  if (g < (1.0 + tau) / 4.0) return 0;
  if (g < (3.0 - tau) / 4.0) return 1;
  return 2;
}

double sharpen_slope(int branch, double tau) {
  if (branch == 1) return (1.0 + tau) / (1.0 - tau);
  return (1.0 - tau) / (1.0 + tau);
}

double sharpen_dtau(int branch, double g, double tau) {
  switch (branch) {
    case 0: return -2.0 * g / ((1.0 + tau) * (1.0 + tau));
    case 1: return (2.0 * g - 1.0) / ((1.0 - tau) * (1.0 - tau));
    default: return (2.0 - 2.0 * g) / ((1.0 + tau) * (1.0 + tau));
  }
}

double sharpen(double g, double tau) {
  assert(g > -1e-9 && g < 1.0 + 1e-9);
  g = std::min(1.0, std::max(0.0, g));
  switch (sharpen_branch(g, tau)) {
    case 0: return (1.0 - tau) / (1.0 + tau) * g;
    case 1: return ((1.0 + tau) * g - tau) / (1.0 - tau);
    default: return ((1.0 - tau) * g + 2.0 * tau) / (1.0 + tau);
  }
}

double sharpen_inverse(double y, double tau) {
  y = std::min(1.0, std::max(0.0, y));
  // Branch images: [0, (1-tau)/4), [(1-tau)/4, (3+tau)/4), [(3+tau)/4, 1].
  if (y < (1.0 - tau) / 4.0) return (1.0 + tau) / (1.0 - tau) * y;
  if (y < (3.0 + tau) / 4.0) return ((1.0 - tau) * y + tau) / (1.0 + tau);
  return ((1.0 + tau) * y - 2.0 * tau) / (1.0 - tau);
}

double alpha_detail(double u, double v, const DrkPrimitive& prim, KernelEval* eval_out,
                    AlphaBranch* branch_out) {
  const KernelEval ev = eval_kernel_detail(u, v, prim);
  const double a = prim.opacity * sharpen(ev.value, prim.tau);
  if (eval_out) *eval_out = ev;
  if (branch_out) {
    branch_out->at_center = ev.at_center;
    branch_out->exp_clamped = ev.exp_clamped;
    branch_out->bracket_lo = ev.at_center ? -1 : ev.bracket_lo;
    branch_out->psi_branch = sharpen_branch(ev.value, prim.tau);
    branch_out->sign_a = ev.coef_a > 0 ? 1 : (ev.coef_a < 0 ? -1 : 0);
    branch_out->sign_b = ev.coef_b > 0 ? 1 : (ev.coef_b < 0 ? -1 : 0);
  }
  return a;
}

double alpha(double u, double v, const DrkPrimitive& prim) {
  return alpha_detail(u, v, prim, nullptr, nullptr);
}

double low_pass_filter_term(double dp_w, double dp_h, double cos_view, double opacity,
                            const KernelConfig& cfg) {
  const double denom = 2.0 * cos_view * cos_view * cfg.lowpass_radius * cfg.lowpass_radius;
  double exponent = -(dp_w * dp_w + dp_h * dp_h) / denom;
  if (exponent < kMinExponent) exponent = kMinExponent;
  return opacity * std::exp(exponent);
}

double low_pass(double a, double dp_w, double dp_h, double cos_view, double opacity,
                const KernelConfig& cfg) {
  if (cos_view < cfg.grazing_eps)
    throw GrazingViewError("view direction nearly parallel to primitive plane");
  return std::max(a, low_pass_filter_term(dp_w, dp_h, cos_view, opacity, cfg));
}

std::optional<VecX> calibrated_radii(const DrkPrimitive& prim) {
  const double level = kThreeSigmaLevel / prim.opacity;
  if (level >= 1.0) return std::nullopt;  // never reaches the 3-sigma level
  const double g = sharpen_inverse(level, prim.tau);
  if (g <= 0 || g >= 1) return std::nullopt;
  const double factor = std::sqrt(-std::log(g));
  return VecX(prim.scales * factor);
}

std::vector<Vec3> calibrated_endpoints(const DrkPrimitive& prim, const KernelConfig&) {
  auto radii = calibrated_radii(prim);
  if (!radii) return {};
  std::vector<Vec3> pts;
  const int k = prim.basis_count();
  pts.reserve(k);
  for (int i = 0; i < k; ++i) {
    const double a = prim.angles[i];
    pts.push_back(prim.center +
                  (*radii)[i] * (std::cos(a) * prim.axis_x() + std::sin(a) * prim.axis_y()));
  }
  return pts;
}

std::optional<double> binning_radius_factor(double opacity, double tau, double alpha_min) {
  const double vis_level = alpha_min / opacity;
  if (vis_level >= 1.0) return std::nullopt;  // alpha can never reach alpha_min
  // Exact support radius of Psi(exp(-r^2 / (2 s^2))) at alpha_min.
  const double g_vis = sharpen_inverse(vis_level, tau);
  double factor = std::sqrt(-2.0 * std::log(g_vis));
  // Never smaller than the calibrated polygon.
  const double cal_level = kThreeSigmaLevel / opacity;
  if (cal_level < 1.0) {
    const double g_cal = sharpen_inverse(cal_level, tau);
    if (g_cal > 0 && g_cal < 1) factor = std::max(factor, std::sqrt(-std::log(g_cal)));
  }
  return factor;
}

DrkPrimitive gaussian_special_case(double s_u, double s_v, const Vec3& mu, const Mat3& rot,
                                   double opacity, const ShBlock& sh) {
  assert(s_u > 0 && s_v > 0);
  DrkPrimitive p;
  p.center = mu;
  p.rot = rot;
  p.angles = VecX(4);
  p.angles << M_PI / 2, M_PI, 3 * M_PI / 2, kTwoPi;
  // The basis on the +-u axis (angle 2*pi and pi) carries s_u, the +-v axis
  // carries s_v, so the quadrant blend reduces to u^2/s_u^2 + v^2/s_v^2.
  p.scales = VecX(4);
  p.scales << s_v, s_u, s_v, s_u;
  p.eta = 0.0;
  p.tau = 0.0;
  p.opacity = opacity;
  p.sh = sh;
  return p;
}

}  // namespace drk
