#pragma once

#include <string>
#include <vector>

#include "drk/core.hpp"

namespace drk {

struct MeshFace {
  std::vector<int> indices;  // 0-based
  Vec3 color = Vec3(0.7, 0.7, 0.7);
};

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<MeshFace> faces;
};

// OBJ subset loader: v, f, usemtl/mtllib (diffuse color only). Polygon faces
// are preserved; non-planar or concave faces are fan-triangulated with a
// warning. Texture coordinates are ignored with a warning.
Mesh load_mesh(const std::string& path, std::vector<std::string>* warnings = nullptr);

// One primitive per face: endpoints on the polygon boundary, padded to
// basis_count by angular bisection points inserted on the edges, near-unit
// L1 blend and maximum sharpness so the opacity cliff traces the face edges.
RawDrkParams face_to_drk_raw(const std::vector<Vec3>& face_vertices, const Vec3& color,
                             int basis_count = 8);
DrkPrimitive face_to_drk(const std::vector<Vec3>& face_vertices, const Vec3& color,
                         int basis_count = 8);

// Whole-mesh conversion; degenerate faces are skipped with a warning, faces
// with more vertices than basis_count raise TooManyVerticesError.
std::vector<RawDrkParams> convert(const Mesh& mesh, int basis_count = 8,
                                  std::vector<std::string>* warnings = nullptr);

// Lambertian shading baked into the degree-0 SH color: scale by
// ambient + (1 - ambient) max(0, -light . n).
void shade_lambert(std::vector<RawDrkParams>& prims, const Vec3& light_dir, double ambient);

// Fraction of the boundary radius at which the sharpened opacity crosses
// one half; face radii are divided by it so the visible silhouette matches
// the face polygon.
double mesh_radius_calibration();

}  // namespace drk
