#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "drk/errors.hpp"
#include "drk/mesh.hpp"
#include "drk/raster.hpp"
#include "test_util.hpp"

using namespace drk;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = std::string("/tmp/") + name;
  std::ofstream out(path);
  out << content;
  return path;
}

const char* kCubeObj = R"(# unit cube
v -0.5 -0.5 -0.5
v  0.5 -0.5 -0.5
v  0.5  0.5 -0.5
v -0.5  0.5 -0.5
v -0.5 -0.5  0.5
v  0.5 -0.5  0.5
v  0.5  0.5  0.5
v -0.5  0.5  0.5
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
)";

// Scanline-style polygon fill oracle: pixel centers inside the projected
// convex polygon.
Image polygon_fill_oracle(const std::vector<Vec3>& verts, const Camera& cam) {
  std::vector<Vec2> proj;
  for (const Vec3& v : verts) {
    const Vec3 p = project_point(cam, v);
    proj.emplace_back(p.x(), p.y());
  }
  Image mask(cam.width, cam.height, 1);
  const int n = static_cast<int>(proj.size());
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Vec2 p(x + 0.5, y + 0.5);
      bool pos = false, neg = false;
      for (int i = 0; i < n; ++i) {
        const Vec2 a = proj[i], b = proj[(i + 1) % n];
        const double cr = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
        pos = pos || cr > 0;
        neg = neg || cr < 0;
      }
      mask.at(x, y, 0) = (pos && neg) ? 0.0 : 1.0;
    }
  return mask;
}

double silhouette_iou(const std::vector<Vec3>& face, const Camera& cam) {
  const DrkPrimitive prim = face_to_drk(face, Vec3(1, 0, 0));
  RenderOptions opt;
  opt.sh_degree = 0;
  opt.background = Vec3::Zero();
  const FrameBuffers fb = render({prim}, cam, opt);
  const Image oracle = polygon_fill_oracle(face, cam);
  long inter = 0, uni = 0;
  for (size_t i = 0; i < oracle.data.size(); ++i) {
    const bool a = fb.alpha.data[i] >= 0.5;
    const bool b = oracle.data[i] >= 0.5;
    inter += (a && b);
    uni += (a || b);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Vec3> random_convex_polygon(std::mt19937_64& rng, int nverts) {
  // Random angles with a minimum separation, random radii; convex by
  // construction on a circle scaled per-vertex mildly.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> angles(nverts);
  double acc = 0;
  for (int i = 0; i < nverts; ++i) {
    acc += 0.35 + unit(rng);
    angles[i] = acc;
  }
  const double total = acc + 0.35 + unit(rng);
  const double radius = 0.3 + 0.3 * unit(rng);
  std::vector<Vec3> verts;
  for (int i = 0; i < nverts; ++i) {
    const double a = angles[i] / total * 2.0 * M_PI;
    verts.emplace_back(radius * std::cos(a), radius * std::sin(a), 0.0);
  }
  return verts;
}

}  // namespace

TEST_SUITE_BEGIN("mesh");

TEST_CASE("cube OBJ loads six quads and eight vertices") {
  const Mesh mesh = load_mesh(write_temp("drk_cube.obj", kCubeObj));
  CHECK(mesh.vertices.size() == 8);
  CHECK(mesh.faces.size() == 6);
  for (const auto& f : mesh.faces) CHECK(f.indices.size() == 4);
}

TEST_CASE("obj indices are one-based and triangles parse") {
  const std::string path = write_temp("drk_tri.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  const Mesh mesh = load_mesh(path);
  REQUIRE(mesh.faces.size() == 1);
  CHECK(mesh.faces[0].indices == std::vector<int>{0, 1, 2});
}

TEST_CASE("concave face is fan-triangulated with a warning") {
  // L-shaped hexagon in the z=0 plane.
  const char* obj = R"(v 0 0 0
v 2 0 0
v 2 1 0
v 1 1 0
v 1 2 0
v 0 2 0
f 1 2 3 4 5 6
)";
  std::vector<std::string> warnings;
  const Mesh mesh = load_mesh(write_temp("drk_l.obj", obj), &warnings);
  CHECK(mesh.faces.size() == 4);  // hexagon fan -> 4 triangles
  CHECK(!warnings.empty());
}

TEST_CASE("parse errors carry line numbers") {
  const std::string path = write_temp("drk_bad.obj", "v 0 0 0\nf 1 2 9\n");
  CHECK_THROWS_AS(load_mesh(path), ParseError);
  try {
    load_mesh(path);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(load_mesh(write_temp("drk_empty.obj", "v 0 0 0\n")), EmptyMeshError);
}

TEST_CASE("square face converts to eight boundary endpoints at uniform angles") {
  const std::vector<Vec3> square = {Vec3(-0.5, -0.5, 0), Vec3(0.5, -0.5, 0), Vec3(0.5, 0.5, 0),
                                    Vec3(-0.5, 0.5, 0)};
  const DrkPrimitive prim = face_to_drk(square, Vec3(1, 0, 0));
  REQUIRE(prim.basis_count() == 8);
  // Spacing is uniform per the octant geometry of a square.
  double prev = 0;
  for (int k = 0; k < 8; ++k) {
    CHECK(prim.angles[k] - prev == doctest::Approx(M_PI / 4).epsilon(1e-9));
    prev = prim.angles[k];
  }
  // Every calibrated boundary point sits on the square outline.
  const double cliff = mesh_radius_calibration();
  for (int k = 0; k < 8; ++k) {
    const double a = prim.angles[k];
    const Vec3 p = prim.center +
                   prim.scales[k] * cliff *
                       (std::cos(a) * prim.axis_x() + std::sin(a) * prim.axis_y());
    const double linf = std::max(std::abs(p.x()), std::abs(p.y()));
    CHECK(linf == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(std::abs(p.z()) < 1e-9);
  }
}

TEST_CASE("equilateral triangle has equal corner radii") {
  std::vector<Vec3> tri;
  for (int i = 0; i < 3; ++i) {
    const double a = 2.0 * M_PI * i / 3.0;
    tri.emplace_back(std::cos(a), std::sin(a), 0.0);
  }
  const DrkPrimitive prim = face_to_drk(tri, Vec3(0, 1, 0));
  // Corners are the vertices; radii of the three vertex bases must agree.
  std::vector<double> corner_scales;
  for (int k = 0; k < prim.basis_count(); ++k) {
    const double r = prim.scales[k] * mesh_radius_calibration();
    if (r == doctest::Approx(1.0).epsilon(1e-6)) corner_scales.push_back(prim.scales[k]);
  }
  CHECK(corner_scales.size() == 3);
}

TEST_CASE("converted square silhouette matches the polygon fill oracle") {
  const std::vector<Vec3> square = {Vec3(-0.5, -0.5, 0), Vec3(0.5, -0.5, 0), Vec3(0.5, 0.5, 0),
                                    Vec3(-0.5, 0.5, 0)};
  Camera cam = testutil::simple_camera(256, 256);
  cam.world_to_cam_trans = Vec3(0, 0, 0.8);
  CHECK(silhouette_iou(square, cam) >= 0.98);
}

TEST_CASE("random convex polygons keep silhouette fidelity") {
  std::mt19937_64 rng(77);
  Camera cam = testutil::simple_camera(128, 128);
  cam.world_to_cam_trans = Vec3(0, 0, 0.9);
  int tested = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = 3 + static_cast<int>(rng() % 6);
    const std::vector<Vec3> poly = random_convex_polygon(rng, n);
    CHECK(silhouette_iou(poly, cam) >= 0.98);
    ++tested;
  }
  CHECK(tested == 100);
}

TEST_CASE("interior opacity is flat and boundary endpoints reproject onto edges") {
  std::mt19937_64 rng(79);
  for (int t = 0; t < 10; ++t) {
    const int n = 3 + static_cast<int>(rng() % 6);
    const std::vector<Vec3> poly = random_convex_polygon(rng, n);
    const DrkPrimitive prim = face_to_drk(poly, Vec3(1, 1, 1));

    // Alpha at the centroid and across the 50%-inset region.
    const double center_alpha = alpha(0, 0, prim);
    CHECK(center_alpha >= 0.99 * prim.opacity);
    double amin = 1.0, amax = 0.0;
    for (int i = 0; i < 200; ++i) {
      // Sample the inset region along rays toward the boundary points.
      const double frac = 0.5 * (i % 10) / 10.0;
      const int k = i % prim.basis_count();
      const double a = prim.angles[k];
      const double r = frac * prim.scales[k] * mesh_radius_calibration();
      const double val = alpha(r * std::cos(a), r * std::sin(a), prim);
      amin = std::min(amin, val);
      amax = std::max(amax, val);
    }
    CHECK(amax - amin < 0.05);

    // Boundary endpoints lie on the polygon outline within 1e-6.
    for (int k = 0; k < prim.basis_count(); ++k) {
      const double a = prim.angles[k];
      const double r = prim.scales[k] * mesh_radius_calibration();
      const Vec3 p = prim.center +
                     r * (std::cos(a) * prim.axis_x() + std::sin(a) * prim.axis_y());
      double dist = 1e9;
      for (size_t e = 0; e < poly.size(); ++e) {
        const Vec3 a3 = poly[e], b3 = poly[(e + 1) % poly.size()];
        const Vec3 ab = b3 - a3;
        const double tt = std::clamp((p - a3).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
        dist = std::min(dist, (a3 + tt * ab - p).norm());
      }
      CHECK(dist < 1e-6);
    }
  }
}

TEST_CASE("convert maps faces to primitives and skips degenerate ones") {
  const Mesh cube = load_mesh(write_temp("drk_cube2.obj", kCubeObj));
  CHECK(convert(cube).size() == 6);

  Mesh empty_faces = cube;
  empty_faces.faces.clear();
  CHECK(convert(empty_faces).empty());

  Mesh degen = cube;
  MeshFace bad;
  bad.indices = {0, 0, 0};
  degen.faces.push_back(bad);
  std::vector<std::string> warnings;
  CHECK(convert(degen, 8, &warnings).size() == 6);
  CHECK(!warnings.empty());

  Mesh toomany = cube;
  MeshFace wide;
  for (int i = 0; i < 9; ++i) wide.indices.push_back(i % 8);
  toomany.faces.push_back(wide);
  CHECK_THROWS_AS(convert(toomany), TooManyVerticesError);
}

TEST_CASE("lambert shading scales the stored color") {
  const std::vector<Vec3> square = {Vec3(-0.5, -0.5, 0), Vec3(0.5, -0.5, 0), Vec3(0.5, 0.5, 0),
                                    Vec3(-0.5, 0.5, 0)};
  auto color_of = [](const RawDrkParams& p) {
    return Vec3(0.5 + 0.28209479177387814 * p.sh_raw(0, 0),
                0.5 + 0.28209479177387814 * p.sh_raw(0, 1),
                0.5 + 0.28209479177387814 * p.sh_raw(0, 2));
  };
  std::vector<RawDrkParams> prims{face_to_drk_raw(square, Vec3(0.8, 0.6, 0.4))};
  const Vec3 normal = quat_to_rotation(prims[0].quat_raw).col(2);

  auto shaded = prims;
  shade_lambert(shaded, -normal, 0.0);  // light along the normal: full intensity
  CHECK((color_of(shaded[0]) - Vec3(0.8, 0.6, 0.4)).norm() < 1e-9);

  shaded = prims;
  const Vec3 perp = quat_to_rotation(prims[0].quat_raw).col(0);
  shade_lambert(shaded, perp, 0.25);  // perpendicular light: ambient only
  CHECK((color_of(shaded[0]) - 0.25 * Vec3(0.8, 0.6, 0.4)).norm() < 1e-9);

  shaded = prims;
  shade_lambert(shaded, Vec3(0.3, -0.8, 0.5), 1.0);  // ambient one: unchanged
  CHECK((color_of(shaded[0]) - Vec3(0.8, 0.6, 0.4)).norm() < 1e-9);
}

TEST_SUITE_END();
