#pragma once

#include "drk/types.hpp"

namespace drk {

// Pinhole camera; right-handed, camera looks down +z in camera space,
// x right, y down in the image. Pixel (i, j) has continuous center (i+0.5, j+0.5).
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat3 world_to_cam_rot = Mat3::Identity();
  Vec3 world_to_cam_trans = Vec3::Zero();

  Vec3 to_camera(const Vec3& world) const { return world_to_cam_rot * world + world_to_cam_trans; }
  Vec3 position() const { return -world_to_cam_rot.transpose() * world_to_cam_trans; }
  Vec3 forward() const { return world_to_cam_rot.row(2).transpose(); }
  bool valid(std::string* why = nullptr) const;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3(0, 0, 1);  // unit length
};

struct Intersection {
  double depth = 0;  // r_t along the ray, world units
  double u = 0;      // tangent-plane coordinates
  double v = 0;
};

enum class HitStatus { Hit, Grazing, Behind };

// Rotation from a (possibly unnormalized) quaternion (w, x, y, z).
// Columns of the result are the world-space directions of the local axes;
// the third column is the plane normal. Throws DegenerateQuaternionError
// when the quaternion norm is below 1e-12.
Mat3 quat_to_rotation(const Vec4& q);

// World-space ray through the continuous image coordinate (px, py).
Ray pixel_ray(const Camera& cam, double px, double py);

// Ray-plane intersection with tangent UV extraction. Non-throwing variant;
// returns Grazing/Behind instead of raising so the render loop can skip.
HitStatus classify_intersect(const Ray& ray, const Vec3& mu, const Mat3& rot, double grazing_eps,
                             Intersection* out);

// Throwing contract variant: GrazingRayError / BehindCameraError.
Intersection intersect_and_uv(const Ray& ray, const Vec3& mu, const Mat3& rot,
                              double grazing_eps = 1e-6);

// Pinhole projection. Throws BehindCameraError when the camera-space depth
// is not positive. Returns (px, py, depth) with depth the camera-space z.
Vec3 project_point(const Camera& cam, const Vec3& world);

// Non-throwing projection; returns false when behind the camera.
bool try_project_point(const Camera& cam, const Vec3& world, Vec3* out);

// Jacobian of (px, py) with respect to the world-space point, 2x3.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& world);

// Real spherical harmonics basis values up to `degree` (max 3) for a unit
// direction, in the conventional band-major order used by splatting codecs.
void sh_basis(const Vec3& dir, int degree, double* out);

// View-dependent RGB from SH coefficients: 0.5 offset on the DC term and a
// clamp at zero, matching the splatting ecosystem convention.
Vec3 sh_eval(const ShBlock& sh, const Vec3& dir, int degree);

// Same evaluation, also reporting which channels were clamped at zero
// (needed by the backward pass).
Vec3 sh_eval_with_clamp(const ShBlock& sh, const Vec3& dir, int degree, bool clamped[3]);

}  // namespace drk
