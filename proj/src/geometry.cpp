#include "drk/geometry.hpp"

#include <cmath>

#include "drk/errors.hpp"

namespace drk {

bool Camera::valid(std::string* why) const {
  auto fail = [&](const char* msg) {
    if (why) *why = msg;
    return false;
  };
  if (!(fx > 0) || !(fy > 0)) return fail("focal lengths must be positive");
  if (width <= 0 || height <= 0) return fail("image dimensions must be positive");
  Mat3 rtr = world_to_cam_rot.transpose() * world_to_cam_rot;
  if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) return fail("rotation not orthonormal");
  return true;
}

Mat3 quat_to_rotation(const Vec4& q) {
  const double n = q.norm();
  if (n < 1e-12) throw DegenerateQuaternionError("quaternion norm below 1e-12");
  const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Ray pixel_ray(const Camera& cam, double px, double py) {
  Vec3 dir_cam((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
  Ray ray;
  ray.origin = cam.position();
  ray.dir = (cam.world_to_cam_rot.transpose() * dir_cam).normalized();
  return ray;
}

HitStatus classify_intersect(const Ray& ray, const Vec3& mu, const Mat3& rot, double grazing_eps,
                             Intersection* out) {
  const Vec3 rz = rot.col(2);
  const double denom = ray.dir.dot(rz);
  if (std::abs(denom) < grazing_eps) return HitStatus::Grazing;
  const double rt = (mu - ray.origin).dot(rz) / denom;
  if (rt <= 0) return HitStatus::Behind;
  const Vec3 d = ray.origin + rt * ray.dir - mu;
  out->depth = rt;
  out->u = rot.col(0).dot(d);
  out->v = rot.col(1).dot(d);
  return HitStatus::Hit;
}

Intersection intersect_and_uv(const Ray& ray, const Vec3& mu, const Mat3& rot, double grazing_eps) {
  Intersection hit;
  switch (classify_intersect(ray, mu, rot, grazing_eps, &hit)) {
    case HitStatus::Hit:
      return hit;
    case HitStatus::Grazing:
      throw GrazingRayError("ray nearly parallel to primitive plane");
    case HitStatus::Behind:
      throw BehindCameraError("ray-plane intersection behind the ray origin");
  }
  return hit;  // unreachable
}

bool try_project_point(const Camera& cam, const Vec3& world, Vec3* out) {
  const Vec3 p = cam.to_camera(world);
  if (p.z() <= 0) return false;
  (*out)[0] = cam.fx * p.x() / p.z() + cam.cx;
  (*out)[1] = cam.fy * p.y() / p.z() + cam.cy;
  (*out)[2] = p.z();
  return true;
}

Vec3 project_point(const Camera& cam, const Vec3& world) {
  Vec3 out;
  if (!try_project_point(cam, world, &out)) throw BehindCameraError("point behind the camera");
  return out;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& world) {
  const Vec3 p = cam.to_camera(world);
  const double z = p.z();
  Eigen::Matrix<double, 2, 3> j_cam;
  j_cam << cam.fx / z, 0, -cam.fx * p.x() / (z * z),
      0, cam.fy / z, -cam.fy * p.y() / (z * z);
  return j_cam * cam.world_to_cam_rot;
}

namespace {
constexpr double kSh0 = 0.28209479177387814;
constexpr double kSh1 = 0.4886025119029199;
constexpr double kSh2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};
constexpr double kSh3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                            0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};
}  // namespace

void sh_basis(const Vec3& dir, int degree, double* out) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  out[0] = kSh0;
  if (degree < 1) return;
  out[1] = -kSh1 * y;
  out[2] = kSh1 * z;
  out[3] = -kSh1 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  const double xy = x * y, yz = y * z, xz = x * z;
  out[4] = kSh2[0] * xy;
  out[5] = kSh2[1] * yz;
  out[6] = kSh2[2] * (2 * zz - xx - yy);
  out[7] = kSh2[3] * xz;
  out[8] = kSh2[4] * (xx - yy);
  if (degree < 3) return;
  out[9] = kSh3[0] * y * (3 * xx - yy);
  out[10] = kSh3[1] * xy * z;
  out[11] = kSh3[2] * y * (4 * zz - xx - yy);
  out[12] = kSh3[3] * z * (2 * zz - 3 * xx - 3 * yy);
  out[13] = kSh3[4] * x * (4 * zz - xx - yy);
  out[14] = kSh3[5] * z * (xx - yy);
  out[15] = kSh3[6] * x * (xx - 3 * yy);
}

Vec3 sh_eval_with_clamp(const ShBlock& sh, const Vec3& dir, int degree, bool clamped[3]) {
  const int terms = std::min<int>(sh_coeff_count(degree), static_cast<int>(sh.rows()));
  double basis[16];
  sh_basis(dir, degree, basis);
  Vec3 rgb(0.5, 0.5, 0.5);
  for (int i = 0; i < terms; ++i)
    for (int c = 0; c < 3; ++c) rgb[c] += basis[i] * sh(i, c);
  for (int c = 0; c < 3; ++c) {
    clamped[c] = rgb[c] < 0;
    if (clamped[c]) rgb[c] = 0;
  }
  return rgb;
}

Vec3 sh_eval(const ShBlock& sh, const Vec3& dir, int degree) {
  bool clamped[3];
  return sh_eval_with_clamp(sh, dir, degree, clamped);
}

}  // namespace drk
