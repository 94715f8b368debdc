#include "drk/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "drk/errors.hpp"

namespace drk {

namespace {

constexpr int kSceneVersion = 1;

void put_f32(std::vector<unsigned char>& buf, double v) {
  const float f = static_cast<float>(v);
  unsigned char b[4];
  std::memcpy(b, &f, 4);
  buf.insert(buf.end(), b, b + 4);  // little-endian host assumed
}

double get_f32(const unsigned char*& p) {
  float f;
  std::memcpy(&f, p, 4);
  p += 4;
  return static_cast<double>(f);
}

}  // namespace

void save_scene(const Scene& scene, const std::string& path) {
  const int k = scene.basis_count;
  const int sh_terms = sh_coeff_count(scene.sh_degree);
  std::vector<unsigned char> payload;
  payload.reserve(scene.params.size() * scalar_count(k, sh_terms) * 4);
  for (const RawDrkParams& p : scene.params) {
    if (p.basis_count() != k || p.sh_terms() != sh_terms)
      throw DimensionMismatchError("primitive layout differs from the scene header");
    for_each_scalar(p, [&](const double& x, ParamClass) { put_f32(payload, x); });
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open scene file for writing: " + path);
  out << "DRKSCENE " << kSceneVersion << ' ' << k << ' ' << scene.sh_degree << ' '
      << scene.params.size() << '\n';
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing scene file: " + path);
}

Scene load_scene(const std::string& path, int expected_basis_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scene file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw CorruptFileError("missing scene header: " + path);
  std::istringstream hs(header);
  std::string magic;
  int version = 0, k = 0, sh_degree = 0;
  long count = -1;
  if (!(hs >> magic >> version >> k >> sh_degree >> count) || magic != "DRKSCENE")
    throw CorruptFileError("not a scene file: " + path);
  if (version != kSceneVersion)
    throw VersionMismatchError("unsupported scene version " + std::to_string(version));
  if (k < 3 || sh_degree < 0 || sh_degree > 3 || count < 0)
    throw CorruptFileError("implausible scene header: " + path);
  if (expected_basis_count > 0 && k != expected_basis_count)
    throw VersionMismatchError("scene has K=" + std::to_string(k) + ", pipeline expects K=" +
                               std::to_string(expected_basis_count));

  const int sh_terms = sh_coeff_count(sh_degree);
  const size_t record_bytes = static_cast<size_t>(scalar_count(k, sh_terms)) * 4;
  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
  if (payload.size() != record_bytes * static_cast<size_t>(count))
    throw CorruptFileError("scene payload size disagrees with the header count: " + path);

  Scene scene;
  scene.basis_count = k;
  scene.sh_degree = sh_degree;
  scene.params.reserve(count);
  const unsigned char* p = payload.data();
  for (long i = 0; i < count; ++i) {
    RawDrkParams rec = RawDrkParams::zeros(k, sh_degree);
    for_each_scalar(rec, [&](double& x, ParamClass) { x = get_f32(p); });
    scene.params.push_back(std::move(rec));
  }
  return scene;
}

namespace {

Camera camera_from_transform(const Eigen::Matrix4d& c2w_gl, double fx, double fy, int width,
                             int height) {
  // OpenGL-style camera (looks down -z, y up) to the internal convention
  // (looks down +z, y down): flip the local y and z axes.
  Mat3 r_c2w = c2w_gl.block<3, 3>(0, 0);
  r_c2w.col(1) *= -1.0;
  r_c2w.col(2) *= -1.0;
  const Vec3 center = c2w_gl.block<3, 1>(0, 3);

  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.width = width;
  cam.height = height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.world_to_cam_rot = r_c2w.transpose();
  cam.world_to_cam_trans = -cam.world_to_cam_rot * center;
  return cam;
}

std::string resolve_image_path(const std::string& base_dir, std::string rel) {
  if (rel.rfind("./", 0) == 0) rel = rel.substr(2);
  const std::string direct = base_dir + rel;
  if (std::filesystem::exists(direct)) return direct;
  if (std::filesystem::exists(direct + ".png")) return direct + ".png";
  if (std::filesystem::exists(direct + ".ppm")) return direct + ".ppm";
  throw MissingImageError("referenced image not found: " + direct);
}

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

Image read_png(const std::string& path, const Vec3& background) {
  PngReadCloser c;
  c.fp = std::fopen(path.c_str(), "rb");
  if (!c.fp) throw IoError("cannot open image: " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, c.fp) != 8 || png_sig_cmp(sig, 0, 8))
    throw UnsupportedFormatError("not a PNG file: " + path);
  c.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  c.info = png_create_info_struct(c.png);
  if (!c.png || !c.info) throw IoError("libpng initialization failed");
  if (setjmp(png_jmpbuf(c.png))) throw CorruptFileError("PNG decode failed: " + path);
  png_init_io(c.png, c.fp);
  png_set_sig_bytes(c.png, 8);
  png_read_info(c.png, c.info);

  const int bit_depth = png_get_bit_depth(c.png, c.info);
  if (bit_depth == 16) throw UnsupportedFormatError("16-bit PNG is not supported: " + path);
  png_set_expand(c.png);
  if (bit_depth < 8) png_set_packing(c.png);
  const int color_type = png_get_color_type(c.png, c.info);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(c.png);
  png_read_update_info(c.png, c.info);

  const int width = static_cast<int>(png_get_image_width(c.png, c.info));
  const int height = static_cast<int>(png_get_image_height(c.png, c.info));
  const int channels = png_get_channels(c.png, c.info);
  if (channels != 3 && channels != 4)
    throw UnsupportedFormatError("unexpected PNG channel count: " + path);

  std::vector<unsigned char> row(static_cast<size_t>(width) * channels);
  Image img(width, height, 3);
  for (int y = 0; y < height; ++y) {
    png_read_row(c.png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      if (channels == 4) {
        const double a = row[x * 4 + 3] / 255.0;
        for (int ch = 0; ch < 3; ++ch)
          img.at(x, y, ch) = a * (row[x * 4 + ch] / 255.0) + (1.0 - a) * background[ch];
      } else {
        for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = row[x * 3 + ch] / 255.0;
      }
    }
  }
  png_read_end(c.png, nullptr);
  return img;
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw UnsupportedFormatError("only P6 PPM is supported: " + path);
  auto next_int = [&]() {
    int v;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (!(in >> v)) throw CorruptFileError("truncated PPM header: " + path);
      return v;
    }
  };
  const int width = next_int();
  const int height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw UnsupportedFormatError("PPM maxval must be 255: " + path);
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw CorruptFileError("truncated PPM payload: " + path);
  Image img(width, height, 3);
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
  return img;
}

void write_png(const std::string& path, const Image& img) {
  PngWriteCloser c;
  c.fp = std::fopen(path.c_str(), "wb");
  if (!c.fp) throw IoError("cannot open image for writing: " + path);
  c.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  c.info = png_create_info_struct(c.png);
  if (!c.png || !c.info) throw IoError("libpng initialization failed");
  if (setjmp(png_jmpbuf(c.png))) throw IoError("PNG encode failed: " + path);
  png_init_io(c.png, c.fp);
  png_set_IHDR(c.png, c.info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(c.png, c.info);
  std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = img.channels == 1 ? img.at(x, y, 0) : img.at(x, y, ch);
        row[x * 3 + ch] =
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    png_write_row(c.png, row.data());
  }
  png_write_end(c.png, nullptr);
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open image for writing: " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = img.channels == 1 ? img.at(x, y, 0) : img.at(x, y, ch);
        raw.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed writing image: " + path);
}

std::string lower_ext(const std::string& path) {
  const size_t dot = path.find_last_of('.');
  if (dot == std::string::npos) return {};
  std::string ext = path.substr(dot + 1);
  for (char& ch : ext) ch = static_cast<char>(std::tolower(ch));
  return ext;
}

}  // namespace

Image read_image(const std::string& path, const Vec3& background) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open image: " + path);
  unsigned char sig[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(sig), 2);
  probe.close();
  if (sig[0] == 0x89 && sig[1] == 'P') return read_png(path, background);
  if (sig[0] == 'P' && sig[1] == '6') return read_ppm(path);
  throw UnsupportedFormatError("unrecognized image format: " + path);
}

void write_image(const std::string& path, const Image& img) {
  const std::string ext = lower_ext(path);
  if (ext == "png") write_png(path, img);
  else if (ext == "ppm") write_ppm(path, img);
  else throw UnsupportedFormatError("unsupported output extension: " + path);
}

DatasetManifest load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw ParseError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.contains("frames") || !doc["frames"].is_array() || doc["frames"].empty())
    throw ParseError("manifest has no frames: " + manifest_path);

  const std::string base_dir = [&] {
    const size_t pos = manifest_path.find_last_of("/\\");
    return pos == std::string::npos ? std::string() : manifest_path.substr(0, pos + 1);
  }();

  DatasetManifest manifest;
  // Image dimensions come from the first referenced image.
  {
    const auto& f0 = doc["frames"][0];
    if (!f0.contains("file_path")) throw ParseError("frame missing file_path");
    const std::string p = resolve_image_path(base_dir, f0["file_path"].get<std::string>());
    const Image probe = read_image(p);
    manifest.width = probe.width;
    manifest.height = probe.height;
  }

  const double global_fov =
      doc.contains("camera_angle_x") ? doc["camera_angle_x"].get<double>() : 0.0;

  for (const auto& frame : doc["frames"]) {
    if (!frame.contains("file_path") || !frame.contains("transform_matrix"))
      throw ParseError("frame missing file_path or transform_matrix");
    const std::string img_path =
        resolve_image_path(base_dir, frame["file_path"].get<std::string>());
    const double fov = frame.contains("camera_angle_x")
                           ? frame["camera_angle_x"].get<double>()
                           : global_fov;
    if (!(fov > 0)) throw ParseError("missing camera_angle_x for frame " + img_path);
    const double fx = manifest.width / (2.0 * std::tan(fov / 2.0));
    const double fy = frame.contains("camera_angle_y")
                          ? manifest.height / (2.0 * std::tan(frame["camera_angle_y"].get<double>() / 2.0))
                          : fx;

    Eigen::Matrix4d m;
    const auto& rows = frame["transform_matrix"];
    if (!rows.is_array() || rows.size() != 4) throw ParseError("transform_matrix must be 4x4");
    for (int r = 0; r < 4; ++r)
      for (int cidx = 0; cidx < 4; ++cidx) m(r, cidx) = rows[r][cidx].get<double>();

    DatasetFrame out;
    out.image_path = img_path;
    out.camera = camera_from_transform(m, fx, fy, manifest.width, manifest.height);
    manifest.frames.push_back(std::move(out));
  }
  return manifest;
}

}  // namespace drk
