#include "drk/mesh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "drk/errors.hpp"
#include "drk/geometry.hpp"

namespace drk {

namespace {

constexpr double kSh0 = 0.28209479177387814;
constexpr double kPlanarTol = 1e-5;

std::string dirname(const std::string& path) {
  const size_t pos = path.find_last_of("/\\");
  return pos == std::string::npos ? std::string() : path.substr(0, pos + 1);
}

void parse_mtl(const std::string& path, std::vector<std::pair<std::string, Vec3>>* materials,
               std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) {
    if (warnings) warnings->push_back("material file not found: " + path);
    return;
  }
  std::string line, current;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "newmtl") {
      ss >> current;
      materials->emplace_back(current, Vec3(0.7, 0.7, 0.7));
    } else if (tag == "Kd" && !materials->empty()) {
      Vec3 kd;
      if (ss >> kd[0] >> kd[1] >> kd[2]) materials->back().second = kd;
    }
  }
}

Vec3 newell_normal(const std::vector<Vec3>& pts) {
  Vec3 n = Vec3::Zero();
  const int m = static_cast<int>(pts.size());
  for (int i = 0; i < m; ++i) {
    const Vec3& a = pts[i];
    const Vec3& b = pts[(i + 1) % m];
    n.x() += (a.y() - b.y()) * (a.z() + b.z());
    n.y() += (a.z() - b.z()) * (a.x() + b.x());
    n.z() += (a.x() - b.x()) * (a.y() + b.y());
  }
  return n;
}

bool face_planar_convex(const std::vector<Vec3>& pts) {
  const int m = static_cast<int>(pts.size());
  if (m == 3) return true;
  Vec3 n = newell_normal(pts);
  const double len = n.norm();
  if (len < 1e-12) return false;
  n /= len;
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : pts) centroid += p;
  centroid /= m;
  for (const Vec3& p : pts)
    if (std::abs((p - centroid).dot(n)) > kPlanarTol) return false;
  for (int i = 0; i < m; ++i) {
    const Vec3 e0 = pts[(i + 1) % m] - pts[i];
    const Vec3 e1 = pts[(i + 2) % m] - pts[(i + 1) % m];
    if (e0.cross(e1).dot(n) < -1e-12) return false;
  }
  return true;
}

Vec4 rotation_to_quat(const Mat3& m) {
  Vec4 q;
  const double tr = m(0, 0) + m(1, 1) + m(2, 2);
  if (tr > 0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q << 0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    q << (m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    q << (m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    q << (m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s;
  }
  return q;
}

// Inverts angle_activation for a target angle list (gaps summing to 2*pi).
// Exact whenever the gap ratios fit the parametrization; otherwise the
// nearest representable angles are produced.
VecX angles_to_raw(const VecX& angles, bool* exact) {
  const int k = static_cast<int>(angles.size());
  const double residual = 1.0 / (k - 2);
  VecX ratios(k);
  double prev = 0;
  double rmin = 1, rmax = 0;
  for (int i = 0; i < k; ++i) {
    ratios[i] = (angles[i] - prev) / (2.0 * M_PI);
    rmin = std::min(rmin, ratios[i]);
    rmax = std::max(rmax, ratios[i]);
    prev = angles[i];
  }
  const double d_lo = residual / rmin;                 // keeps every step above the residual
  const double d_hi = (1.0 + residual) / rmax;         // keeps every sigmoid below one
  *exact = d_lo < d_hi;
  const double total = *exact ? std::sqrt(d_lo * d_hi) : 0.5 * (d_lo + d_hi);
  VecX raw(k);
  for (int i = 0; i < k; ++i) {
    const double s = std::clamp(ratios[i] * total - residual, 1e-9, 1.0 - 1e-9);
    raw[i] = sigmoid_inverse(s);
  }
  return raw;
}

struct BoundaryPoint {
  Vec2 plane;   // tangent coordinates
  double angle; // polar angle around the centroid, first vertex at 0
};

}  // namespace

double mesh_radius_calibration() { return std::sqrt(2.0 * std::log(2.0)); }

Mesh load_mesh(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh file: " + path);

  Mesh mesh;
  std::vector<std::pair<std::string, Vec3>> materials;
  Vec3 current_color(0.7, 0.7, 0.7);
  bool warned_texcoords = false;
  std::string line;
  int line_no = 0;

  std::vector<MeshFace> parsed_faces;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p[0] >> p[1] >> p[2]))
        throw ParseError("malformed vertex at line " + std::to_string(line_no));
      mesh.vertices.push_back(p);
    } else if (tag == "vt") {
      if (!warned_texcoords && warnings) {
        warnings->push_back("texture coordinates are ignored");
        warned_texcoords = true;
      }
    } else if (tag == "f") {
      MeshFace face;
      face.color = current_color;
      std::string tok;
      while (ss >> tok) {
        const size_t slash = tok.find('/');
        const std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
        int idx = 0;
        try {
          idx = std::stoi(head);
        } catch (...) {
          throw ParseError("malformed face index at line " + std::to_string(line_no));
        }
        if (idx > 0) idx -= 1;
        else if (idx < 0) idx += static_cast<int>(mesh.vertices.size());
        else throw ParseError("face index 0 at line " + std::to_string(line_no));
        if (idx < 0 || idx >= static_cast<int>(mesh.vertices.size()))
          throw ParseError("face index out of range at line " + std::to_string(line_no));
        face.indices.push_back(idx);
      }
      if (face.indices.size() < 3)
        throw ParseError("face with fewer than 3 vertices at line " + std::to_string(line_no));
      parsed_faces.push_back(std::move(face));
    } else if (tag == "mtllib") {
      std::string file;
      if (ss >> file) parse_mtl(dirname(path) + file, &materials, warnings);
    } else if (tag == "usemtl") {
      std::string name;
      ss >> name;
      current_color = Vec3(0.7, 0.7, 0.7);
      for (const auto& [mat, kd] : materials)
        if (mat == name) current_color = kd;
    }
    // o/g/s/vn and other tags carry no geometry we use.
  }
  if (parsed_faces.empty()) throw EmptyMeshError("mesh has no faces: " + path);

  for (MeshFace& face : parsed_faces) {
    std::vector<Vec3> pts;
    pts.reserve(face.indices.size());
    for (int idx : face.indices) pts.push_back(mesh.vertices[idx]);
    if (pts.size() > 3 && !face_planar_convex(pts)) {
      if (warnings)
        warnings->push_back("non-planar or concave face fan-triangulated (" +
                            std::to_string(pts.size()) + " vertices)");
      for (size_t i = 1; i + 1 < face.indices.size(); ++i) {
        MeshFace tri;
        tri.color = face.color;
        tri.indices = {face.indices[0], face.indices[i], face.indices[i + 1]};
        mesh.faces.push_back(std::move(tri));
      }
    } else {
      mesh.faces.push_back(std::move(face));
    }
  }
  return mesh;
}

RawDrkParams face_to_drk_raw(const std::vector<Vec3>& face_vertices, const Vec3& color,
                             int basis_count) {
  const int n = static_cast<int>(face_vertices.size());
  if (n < 3) throw DegenerateFaceError("face needs at least 3 vertices");
  if (n > basis_count)
    throw TooManyVerticesError("face has " + std::to_string(n) + " vertices, limit is " +
                               std::to_string(basis_count));

  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : face_vertices) centroid += p;
  centroid /= n;

  Vec3 normal = newell_normal(face_vertices);
  const double nlen = normal.norm();
  if (nlen < 1e-12) throw DegenerateFaceError("face has zero area");
  normal /= nlen;

  Vec3 rx = face_vertices[0] - centroid;
  rx -= rx.dot(normal) * normal;
  if (rx.norm() < 1e-12) throw DegenerateFaceError("first vertex coincides with the centroid");
  rx.normalize();
  const Vec3 ry = normal.cross(rx);
  Mat3 rot;
  rot.col(0) = rx;
  rot.col(1) = ry;
  rot.col(2) = normal;

  auto to_plane = [&](const Vec3& p) {
    const Vec3 d = p - centroid;
    return Vec2(d.dot(rx), d.dot(ry));
  };
  auto angle_of = [](const Vec2& p, bool first) {
    if (first) return 0.0;
    double a = std::atan2(p.y(), p.x());
    if (a <= 0) a += 2.0 * M_PI;
    return a;
  };

  std::vector<BoundaryPoint> boundary;
  boundary.reserve(basis_count);
  for (int i = 0; i < n; ++i) {
    const Vec2 p = to_plane(face_vertices[i]);
    if (p.norm() < 1e-12) throw DegenerateFaceError("vertex coincides with the centroid");
    boundary.push_back({p, angle_of(p, i == 0)});
  }
  for (int i = 1; i < n; ++i)
    if (boundary[i].angle <= boundary[i - 1].angle)
      throw DegenerateFaceError("vertices do not wind monotonically around the centroid");

  // Pad to basis_count by bisecting the largest angular gap; the inserted
  // point lies on the edge, which keeps the boundary straight under the L1
  // blend.
  while (static_cast<int>(boundary.size()) < basis_count) {
    const int m = static_cast<int>(boundary.size());
    int widest = 0;
    double best = -1;
    for (int i = 0; i < m; ++i) {
      const double next = i + 1 < m ? boundary[i + 1].angle : 2.0 * M_PI;
      const double gap = next - boundary[i].angle;
      if (gap > best + 1e-15) {
        best = gap;
        widest = i;
      }
    }
    const double next_angle =
        widest + 1 < m ? boundary[widest + 1].angle : 2.0 * M_PI;
    const double mid = 0.5 * (boundary[widest].angle + next_angle);
    const Vec2 a = boundary[widest].plane;
    const Vec2 b = boundary[(widest + 1) % m].plane;
    const Vec2 dir(std::cos(mid), std::sin(mid));
    auto cross2 = [](const Vec2& p, const Vec2& q) { return p.x() * q.y() - p.y() * q.x(); };
    const double ca = cross2(dir, a), cb = cross2(dir, b);
    const double t = ca / (ca - cb);
    const Vec2 inserted = a + t * (b - a);
    boundary.insert(boundary.begin() + widest + 1, {inserted, mid});
  }

  // Kernel ordering: angles in (0, 2*pi] with the first vertex carried at
  // exactly 2*pi.
  const int k = basis_count;
  VecX angles(k), radii(k);
  for (int i = 1; i < k; ++i) {
    angles[i - 1] = boundary[i].angle;
    radii[i - 1] = boundary[i].plane.norm();
  }
  angles[k - 1] = 2.0 * M_PI;
  radii[k - 1] = boundary[0].plane.norm();

  RawDrkParams raw = RawDrkParams::zeros(k, 0);
  raw.center_raw = centroid;
  raw.quat_raw = rotation_to_quat(rot);
  bool exact = false;
  raw.angle_raw = angles_to_raw(angles, &exact);
  const double calibration = mesh_radius_calibration();
  for (int i = 0; i < k; ++i) raw.scale_raw[i] = std::log(radii[i] / calibration);
  raw.eta_raw = sigmoid_inverse(1.0 - 1e-6);
  raw.tau_raw = tau_raw_for(kTauHigh - 1e-6);
  raw.opacity_raw = sigmoid_inverse(1.0 - 1e-6);
  for (int c = 0; c < 3; ++c) raw.sh_raw(0, c) = (color[c] - 0.5) / kSh0;
  return raw;
}

DrkPrimitive face_to_drk(const std::vector<Vec3>& face_vertices, const Vec3& color,
                         int basis_count) {
  return activate(face_to_drk_raw(face_vertices, color, basis_count));
}

std::vector<RawDrkParams> convert(const Mesh& mesh, int basis_count,
                                  std::vector<std::string>* warnings) {
  std::vector<RawDrkParams> out;
  out.reserve(mesh.faces.size());
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    const MeshFace& face = mesh.faces[f];
    std::vector<Vec3> pts;
    pts.reserve(face.indices.size());
    for (int idx : face.indices) pts.push_back(mesh.vertices[idx]);
    try {
      out.push_back(face_to_drk_raw(pts, face.color, basis_count));
    } catch (const DegenerateFaceError& e) {
      if (warnings)
        warnings->push_back("skipping degenerate face " + std::to_string(f) + ": " + e.what());
    }
  }
  return out;
}

void shade_lambert(std::vector<RawDrkParams>& prims, const Vec3& light_dir, double ambient) {
  const Vec3 l = light_dir.normalized();
  for (RawDrkParams& p : prims) {
    const Mat3 rot = quat_to_rotation(p.quat_raw);
    const double lambert = std::max(0.0, -l.dot(rot.col(2)));
    const double factor = ambient + (1.0 - ambient) * lambert;
    for (int c = 0; c < 3; ++c) {
      const double color = 0.5 + kSh0 * p.sh_raw(0, c);
      const double shaded = std::clamp(color * factor, 0.0, 1.0);
      p.sh_raw(0, c) = (shaded - 0.5) / kSh0;
    }
  }
}

}  // namespace drk
