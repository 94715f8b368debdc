#pragma once

#include <optional>
#include <string>
#include <vector>

#include "drk/geometry.hpp"
#include "drk/image.hpp"
#include "drk/types.hpp"

namespace drk {

// Scene container: raw parameter records plus the shared layout.
struct Scene {
  int basis_count = 8;
  int sh_degree = 0;
  std::vector<RawDrkParams> params;
};

// Binary scene format: one plain-text header line
//   DRKSCENE <version> <K> <sh_degree> <count>\n
// followed by little-endian float32 records in field order (center, quat,
// scales, angles, eta, tau, opacity, sh).
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path, int expected_basis_count = -1);

struct DatasetFrame {
  std::string image_path;
  Camera camera;
};

struct DatasetManifest {
  std::vector<DatasetFrame> frames;
  int width = 0, height = 0;
  bool synthetic = true;  // transform-manifest datasets default to white background
};

// Transform-manifest ingestion (field-of-view plus per-frame 4x4 pose,
// OpenGL-style camera axes converted to the internal convention). Verifies
// all referenced images exist.
DatasetManifest load_dataset(const std::string& manifest_path);

// PNG (8-bit) and PPM (P6, maxval 255) in [0, 1]; an alpha channel is
// composited over `background` on read.
Image read_image(const std::string& path, const Vec3& background = Vec3::Zero());
void write_image(const std::string& path, const Image& img);

}  // namespace drk
