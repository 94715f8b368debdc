#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

namespace drk {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using ShBlock = Eigen::Matrix<double, Eigen::Dynamic, 3>;  // (degree+1)^2 rows, RGB columns

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// Unconstrained learnable parameters of one primitive, pre-activation.
struct RawDrkParams {
  Vec3 center_raw = Vec3::Zero();
  Vec4 quat_raw = Vec4(1, 0, 0, 0);
  VecX scale_raw;  // K entries, log-scale
  VecX angle_raw;  // K entries, unconstrained
  double eta_raw = 0.0;
  double tau_raw = 0.0;
  double opacity_raw = 0.0;
  ShBlock sh_raw;  // passed through activation unchanged

  int basis_count() const { return static_cast<int>(scale_raw.size()); }
  int sh_terms() const { return static_cast<int>(sh_raw.rows()); }
  bool all_finite() const;

  // Default record of the given shape: identity rotation, zero scales,
  // angles and colors. For gradient/moment buffers use zeros_like.
  static RawDrkParams zeros(int k, int sh_degree);
  // Every scalar zero, including the quaternion.
  static RawDrkParams zeros_like(const RawDrkParams& shape);
};

// Parameter classes, used for learning-rate groups and gradient reports.
enum class ParamClass { Center, Quaternion, Scale, Angle, Eta, Tau, Opacity, Sh };

const char* param_class_name(ParamClass c);

// Visits every scalar of a raw parameter record in a fixed order.
// Used by the optimizer, finite-difference harness and serialization.
template <typename Fn>
void for_each_scalar(RawDrkParams& p, Fn&& fn) {
  for (int i = 0; i < 3; ++i) fn(p.center_raw[i], ParamClass::Center);
  for (int i = 0; i < 4; ++i) fn(p.quat_raw[i], ParamClass::Quaternion);
  for (int i = 0; i < p.scale_raw.size(); ++i) fn(p.scale_raw[i], ParamClass::Scale);
  for (int i = 0; i < p.angle_raw.size(); ++i) fn(p.angle_raw[i], ParamClass::Angle);
  fn(p.eta_raw, ParamClass::Eta);
  fn(p.tau_raw, ParamClass::Tau);
  fn(p.opacity_raw, ParamClass::Opacity);
  for (int r = 0; r < p.sh_raw.rows(); ++r)
    for (int c = 0; c < 3; ++c) fn(p.sh_raw(r, c), ParamClass::Sh);
}

template <typename Fn>
void for_each_scalar(const RawDrkParams& p, Fn&& fn) {
  for (int i = 0; i < 3; ++i) fn(p.center_raw[i], ParamClass::Center);
  for (int i = 0; i < 4; ++i) fn(p.quat_raw[i], ParamClass::Quaternion);
  for (int i = 0; i < p.scale_raw.size(); ++i) fn(p.scale_raw[i], ParamClass::Scale);
  for (int i = 0; i < p.angle_raw.size(); ++i) fn(p.angle_raw[i], ParamClass::Angle);
  fn(p.eta_raw, ParamClass::Eta);
  fn(p.tau_raw, ParamClass::Tau);
  fn(p.opacity_raw, ParamClass::Opacity);
  for (int r = 0; r < p.sh_raw.rows(); ++r)
    for (int c = 0; c < 3; ++c) fn(p.sh_raw(r, c), ParamClass::Sh);
}

inline int scalar_count(int k, int sh_terms) { return 3 + 4 + 2 * k + 3 + 3 * sh_terms; }

// Activated primitive. Immutable after activation; safe to share across threads.
struct DrkPrimitive {
  Vec3 center = Vec3::Zero();           // mu
  Mat3 rot = Mat3::Identity();          // columns are the local axes R_x, R_y, R_z
  VecX scales;                          // s_k > 0
  VecX angles;                          // theta_k, strictly increasing, angles[K-1] == 2*pi
  double eta = 0.5;                     // L1/L2 blend weight in (0,1)
  double tau = 0.0;                     // sharpness in (-0.1, 0.99)
  double opacity = 0.5;                 // in (0,1)
  ShBlock sh;

  int basis_count() const { return static_cast<int>(scales.size()); }
  Vec3 axis_x() const { return rot.col(0); }
  Vec3 axis_y() const { return rot.col(1); }
  Vec3 normal() const { return rot.col(2); }

  // Endpoint of radial basis k in tangent-plane coordinates.
  Vec2 endpoint(int k) const {
    return Vec2(scales[k] * std::cos(angles[k]), scales[k] * std::sin(angles[k]));
  }

  bool valid(std::string* why = nullptr) const;
};

struct KernelConfig {
  int basis_count = 8;              // K
  double lowpass_radius = 0.5;      // s_l, pixels
  double alpha_min = 1.0 / 255.0;   // visibility threshold
  double grazing_eps = 1e-6;        // minimum |r_d . R_z|
};

}  // namespace drk
