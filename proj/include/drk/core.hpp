#pragma once

#include <optional>

#include "drk/types.hpp"

namespace drk {

// Activation maps between unconstrained raws and the valid primitive ranges.
// tau uses sigmoid remapped to (-0.1, 0.99); eta and opacity plain sigmoid;
// scales exp; angles the cumulative-step construction in angle_activation.
double sigmoid(double x);
double sigmoid_inverse(double y);

constexpr double kTauLow = -0.1;
constexpr double kTauHigh = 0.99;
constexpr double kMinExponent = -30.0;  // exponents clamped to [-30, 0]

// Raw tau value that activates to the given tau.
double tau_raw_for(double tau);

// theta_k from unconstrained raws: steps sigmoid(raw_k) + 1/(K-2), cumulative
// sum, rescaled so theta_K == 2*pi. Output is strictly increasing with every
// consecutive gap below pi.
VecX angle_activation(const VecX& angle_raw);

// Jacobian d(theta)/d(angle_raw), K x K. Row i is the gradient of theta_i.
Eigen::MatrixXd angle_activation_jacobian(const VecX& angle_raw);

// Activates a raw record into a primitive. Throws NonFiniteError or
// DegenerateQuaternionError.
DrkPrimitive activate(const RawDrkParams& raw);

// Internals of one kernel evaluation, kept for the backward pass and for
// masking finite differences near branch switches.
struct KernelEval {
  double value = 1.0;          // g in (0, 1]
  double r2_sq = 0;            // u^2 + v^2
  double theta = 0;            // polar angle in (0, 2*pi]
  int bracket_lo = 0;          // basis index k (0-based); wrap pairs (K-1, 0)
  int bracket_hi = 0;
  double delta = 0;            // relative angular distance in [0, pi]
  double inv_sbar_sq = 0;      // cosine-blended scale term
  double coef_a = 0, coef_b = 0;  // coordinates in the endpoint basis
  double r1 = 0;               // |a| + |b|
  bool at_center = false;
  bool exp_clamped = false;
};

// Branch signature of one alpha evaluation; finite-difference checks mask
// samples whose signature changes under perturbation.
struct AlphaBranch {
  int bracket_lo = -1;
  int psi_branch = -1;   // 0/1/2, -1 when at the exact center
  int sign_a = 0, sign_b = 0;
  bool at_center = false;
  bool exp_clamped = false;

  bool operator==(const AlphaBranch&) const = default;
};

// Kernel density g(u, v) in (0, 1]: cosine-interpolated radial scaling
// blended with the endpoint-basis L1 distance through eta. Returns exactly 1
// at the center. Throws DegenerateBasisError when the bracketing endpoint
// matrix is numerically singular.
KernelEval eval_kernel_detail(double u, double v, const DrkPrimitive& prim);
double eval_kernel(double u, double v, const DrkPrimitive& prim);

// Piecewise-linear sharpening. Continuous, monotone, fixes 0, 1/2 and 1.
double sharpen(double g, double tau);
double sharpen_inverse(double y, double tau);
int sharpen_branch(double g, double tau);            // 0, 1 or 2
double sharpen_slope(int branch, double tau);        // dPsi/dg on a branch
double sharpen_dtau(int branch, double g, double tau);  // dPsi/dtau on a branch

// alpha = opacity * Psi(g(u, v)).
double alpha(double u, double v, const DrkPrimitive& prim);
double alpha_detail(double u, double v, const DrkPrimitive& prim, KernelEval* eval_out,
                    AlphaBranch* branch_out);

// Screen-space low-pass floor: alpha_tilde = max(alpha, o * filter(dp)).
// dp_w/dp_h are the pixel-to-projected-center distances in pixels, cos_view
// = |r_d . R_z|. Throws GrazingViewError below cfg.grazing_eps.
double low_pass(double a, double dp_w, double dp_h, double cos_view, double opacity,
                const KernelConfig& cfg);
double low_pass_filter_term(double dp_w, double dp_h, double cos_view, double opacity,
                            const KernelConfig& cfg);

// Calibrated radial lengths s_k^c = s_k * sqrt(-log(PsiInv(e^-9 / o))).
// Returns nullopt when the primitive can never reach the 3-sigma visibility
// level (o <= e^-9).
std::optional<VecX> calibrated_radii(const DrkPrimitive& prim);

// World-space culling polygon endpoints mu + s_k^c (cos R_x + sin R_y).
// Empty when never visible.
std::vector<Vec3> calibrated_endpoints(const DrkPrimitive& prim, const KernelConfig& cfg);

// Radius multiplier covering every point where alpha can still reach
// alpha_min: the larger of the calibrated radius factor and the exact
// visibility radius of Psi(exp(-r^2 / (2 s^2))). Used by tile binning, which
// must be conservative at alpha_min rather than at the 3-sigma level.
std::optional<double> binning_radius_factor(double opacity, double tau, double alpha_min);

// K=4 primitive reproducing the closed-form 2D Gaussian with axis scales
// (s_u, s_v): uniform quadrant angles, eta = 0, tau = 0.
DrkPrimitive gaussian_special_case(double s_u, double s_v, const Vec3& mu, const Mat3& rot,
                                   double opacity, const ShBlock& sh);

}  // namespace drk
