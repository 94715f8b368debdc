#include <doctest.h>

#include <random>

#include "drk/raster.hpp"
#include "test_util.hpp"

using namespace drk;

namespace {

// Fronto-parallel primitive covering roughly the given pixel radius.
DrkPrimitive flat_primitive(const Vec3& center, double scale, double opacity, double tau,
                            const Vec3& color) {
  RawDrkParams raw = RawDrkParams::zeros(8, 0);
  raw.center_raw = center;
  raw.scale_raw.setConstant(std::log(scale));
  raw.opacity_raw = sigmoid_inverse(opacity);
  raw.tau_raw = tau_raw_for(tau);
  for (int c = 0; c < 3; ++c) raw.sh_raw(0, c) = (color[c] - 0.5) / 0.28209479177387814;
  return activate(raw);
}

}  // namespace

TEST_SUITE_BEGIN("raster");

TEST_CASE("cache step follows the streaming insertion contract") {
  SortCache cache;
  SortCache::Entry popped;

  SUBCASE("empty cache with end marker finishes") {
    CHECK(cache.step(nullptr, &popped) == SortCache::Result::Finished);
  }

  SUBCASE("depths 3,1,2 pop in sorted order") {
    const double depths[3] = {3, 1, 2};
    for (int i = 0; i < 3; ++i) {
      SortCache::Entry e{depths[i], i, 0, 0};
      CHECK(cache.step(&e, &popped) == SortCache::Result::None);
    }
    std::vector<double> order;
    while (cache.step(nullptr, &popped) == SortCache::Result::Popped)
      order.push_back(popped.depth);
    CHECK(order == std::vector<double>{1, 2, 3});
  }

  SUBCASE("full cache pops the current minimum first") {
    for (int i = 0; i < SortCache::kCapacity; ++i) {
      SortCache::Entry e{static_cast<double>(10 + i), i, 0, 0};
      cache.step(&e, &popped);
    }
    SortCache::Entry deeper{100.0, 99, 0, 0};
    CHECK(cache.step(&deeper, &popped) == SortCache::Result::Popped);
    CHECK(popped.depth == 10.0);
    // An incoming shallower than everything pops straight through.
    SortCache::Entry shallow{1.0, 98, 0, 0};
    CHECK(cache.step(&shallow, &popped) == SortCache::Result::Popped);
    CHECK(popped.depth == 1.0);
    CHECK(popped.id == 98);
  }
}

TEST_CASE("cache sorting equals exact sort when the disorder fits the window") {
  // Replacement selection sorts any stream whose elements are at most
  // kCapacity positions out of place; a fully buffered stream (n <= 8) is
  // always exact.
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 7);
    std::vector<double> depths(n);
    for (double& d : depths) d = unit(rng);
    SortCache cache;
    SortCache::Entry popped;
    std::vector<double> order;
    for (int i = 0; i < n; ++i) {
      SortCache::Entry e{depths[i], i, 0, 0};
      if (cache.step(&e, &popped) == SortCache::Result::Popped) order.push_back(popped.depth);
    }
    while (cache.step(nullptr, &popped) == SortCache::Result::Popped)
      order.push_back(popped.depth);
    std::vector<double> expect = depths;
    std::sort(expect.begin(), expect.end());
    CHECK(order == expect);
  }
}

TEST_CASE("binning drops primitives behind the camera") {
  Camera cam = testutil::simple_camera();
  const DrkPrimitive p = flat_primitive(Vec3(0, 0, -2), 0.3, 0.9, 0.0, Vec3(1, 0, 0));
  const TileBinning bins = bin_primitives({p}, cam, KernelConfig{});
  for (const auto& tile : bins.tiles) CHECK(tile.empty());
}

TEST_CASE("tiny primitive lands in one tile, validated against brute force") {
  Camera cam = testutil::simple_camera(64, 64);
  // Center projects into tile (1,1); the culling radius stays inside it.
  const DrkPrimitive p = flat_primitive(Vec3(-0.12, -0.12, 1.0), 0.02, 0.95, 0.3, Vec3(1, 0, 0));
  KernelConfig cfg;
  const TileBinning bins = bin_primitives({p}, cam, cfg);
  int retained = 0;
  for (const auto& tile : bins.tiles) retained += static_cast<int>(tile.size());
  CHECK(retained >= 1);

  // Brute force: every pixel above alpha_min must be inside a retained tile.
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const Ray ray = pixel_ray(cam, x + 0.5, y + 0.5);
      Intersection hit;
      if (classify_intersect(ray, p.center, p.rot, cfg.grazing_eps, &hit) != HitStatus::Hit)
        continue;
      double a = alpha(hit.u, hit.v, p);
      Vec3 proj;
      if (try_project_point(cam, p.center, &proj)) {
        const double cv = std::abs(ray.dir.dot(p.normal()));
        a = low_pass(a, x + 0.5 - proj.x(), y + 0.5 - proj.y(), cv, p.opacity, cfg);
      }
      if (a < cfg.alpha_min) continue;
      CHECK_FALSE(bins.tile(x / 16, y / 16).empty());
    }
}

TEST_CASE("diagonal sliver retains fewer tiles than its bounding box") {
  Camera cam = testutil::simple_camera(128, 128);
  // Long thin kernel at 45 degrees across the image.
  RawDrkParams raw = RawDrkParams::zeros(8, 0);
  raw.center_raw = Vec3(0, 0, 1.0);
  raw.scale_raw.setConstant(std::log(0.02));
  raw.scale_raw[1] = raw.scale_raw[5] = std::log(0.9);  // bases 2 and 6 sit at 90/270 deg
  raw.angle_raw.setZero();
  raw.opacity_raw = sigmoid_inverse(0.95);
  raw.tau_raw = tau_raw_for(0.5);
  DrkPrimitive p = activate(raw);
  // Rotate the plane 45 degrees about the view axis.
  const double h = std::cos(M_PI / 8), s = std::sin(M_PI / 8);
  p.rot = quat_to_rotation(Vec4(h, 0, 0, s)) * p.rot;

  const TileBinning bins = bin_primitives({p}, cam, KernelConfig{});
  int tx0 = 1 << 20, tx1 = -1, ty0 = 1 << 20, ty1 = -1, retained = 0;
  for (int ty = 0; ty < bins.tiles_y; ++ty)
    for (int tx = 0; tx < bins.tiles_x; ++tx)
      if (!bins.tile(tx, ty).empty()) {
        ++retained;
        tx0 = std::min(tx0, tx);
        tx1 = std::max(tx1, tx);
        ty0 = std::min(ty0, ty);
        ty1 = std::max(ty1, ty);
      }
    REQUIRE(retained > 0);
  const int bbox_tiles = (tx1 - tx0 + 1) * (ty1 - ty0 + 1);
  CHECK(retained < bbox_tiles);
}

TEST_CASE("empty scene renders the background") {
  Camera cam = testutil::simple_camera(32, 32);
  RenderOptions opt;
  opt.background = Vec3(0.2, 0.4, 0.6);
  const FrameBuffers fb = render({}, cam, opt);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      CHECK(fb.color.at(x, y, 0) == doctest::Approx(0.2));
      CHECK(fb.color.at(x, y, 1) == doctest::Approx(0.4));
      CHECK(fb.color.at(x, y, 2) == doctest::Approx(0.6));
      CHECK(fb.alpha.at(x, y, 0) == 0.0);
    }
}

TEST_CASE("opaque primitive reproduces its SH color") {
  Camera cam = testutil::simple_camera(32, 32);
  const Vec3 color(0.8, 0.3, 0.1);
  const DrkPrimitive p = flat_primitive(Vec3(0, 0, 1.0), 2.0, 1.0 - 1e-7, 0.98, color);
  RenderOptions opt;
  opt.sh_degree = 0;
  const FrameBuffers fb = render({p}, cam, opt);
  const int cx = 16, cy = 16;
  for (int c = 0; c < 3; ++c) CHECK(std::abs(fb.color.at(cx, cy, c) - color[c]) < 1.0 / 255.0);
  CHECK(fb.alpha.at(cx, cy, 0) > 0.99);
  CHECK(fb.depth.at(cx, cy, 0) == doctest::Approx(1.0).epsilon(1e-3));
  // The emitted normal faces the camera.
  CHECK(fb.normal.at(cx, cy, 2) < 0);
}

TEST_CASE("two-layer compositing expands per the blending series") {
  Camera cam = testutil::simple_camera(32, 32);
  const Vec3 c1(0.9, 0.1, 0.1), c2(0.1, 0.9, 0.1), bg(0.0, 0.0, 1.0);
  // Large flat kernels with alpha 0.5 at the center pixel.
  const DrkPrimitive p1 = flat_primitive(Vec3(0, 0, 1.0), 4.0, 0.5, 0.98, c1);
  const DrkPrimitive p2 = flat_primitive(Vec3(0, 0, 2.0), 8.0, 0.5, 0.98, c2);
  RenderOptions opt;
  opt.sh_degree = 0;
  opt.background = bg;
  const FrameBuffers fb = render({p1, p2}, cam, opt);
  const Vec3 expect = 0.5 * c1 + 0.25 * c2 + 0.25 * bg;
  for (int c = 0; c < 3; ++c)
    CHECK(fb.color.at(16, 16, c) == doctest::Approx(expect[c]).epsilon(2e-3));
}

TEST_CASE("cache-sorted render equals the exact-sort oracle under low overlap") {
  std::mt19937_64 rng(97);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Camera cam = testutil::simple_camera(48, 48);
  std::vector<DrkPrimitive> prims;
  for (int i = 0; i < 6; ++i) {
    prims.push_back(flat_primitive(Vec3(0.4 * (unit(rng) - 0.5), 0.4 * (unit(rng) - 0.5),
                                        0.8 + 0.3 * unit(rng)),
                                   0.2 + 0.2 * unit(rng), 0.3 + 0.5 * unit(rng), 0.3,
                                   Vec3(unit(rng), unit(rng), unit(rng))));
  }
  RenderOptions cached;
  cached.sh_degree = 0;
  RenderOptions exact = cached;
  exact.exact_sort = true;
  const FrameBuffers a = render(prims, cam, cached);
  const FrameBuffers b = render(prims, cam, exact);
  CHECK(a.color.data == b.color.data);  // bitwise
  CHECK(a.depth.data == b.depth.data);
  CHECK(a.alpha.data == b.alpha.data);
  CHECK(a.normal.data == b.normal.data);
}

TEST_CASE("renders are identical across thread counts") {
  std::mt19937_64 rng(101);
  std::vector<DrkPrimitive> prims;
  for (int i = 0; i < 20; ++i) prims.push_back(testutil::random_primitive(rng));
  Camera cam = testutil::simple_camera(64, 64);
  cam.world_to_cam_trans = Vec3(0, 0, 2.0);
  RenderOptions one;
  one.threads = 1;
  RenderOptions many = one;
  many.threads = 4;
  const FrameBuffers a = render(prims, cam, one);
  const FrameBuffers b = render(prims, cam, many);
  CHECK(a.color.data == b.color.data);
  CHECK(a.depth.data == b.depth.data);
  CHECK(a.normal.data == b.normal.data);
  CHECK(a.alpha.data == b.alpha.data);
}

TEST_CASE("sorting metrics on a pre-sorted stream are perfect") {
  Camera cam = testutil::simple_camera(32, 32);
  std::vector<DrkPrimitive> prims;
  for (int i = 0; i < 5; ++i)
    prims.push_back(flat_primitive(Vec3(0, 0, 1.0 + 0.3 * i), 1.0, 0.5, 0.0, Vec3(1, 1, 1)));
  const SortingMetrics m =
      eval_sorting(prims, cam, KernelConfig{}, PresortMode::NearestDepth, true);
  CHECK(m.pixels > 0);
  CHECK(m.accuracy == doctest::Approx(1.0));
  CHECK(m.kendall_tau == doctest::Approx(1.0));
  CHECK(m.mae == doctest::Approx(0.0));
}

TEST_CASE("sorting mode ordering over random scenes") {
  // Mean Kendall tau: nearest+cache >= center+cache >= cache-only >= none.
  double tau[4] = {0, 0, 0, 0};
  const int seeds = 12;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(500 + s);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<DrkPrimitive> prims;
    for (int i = 0; i < 50; ++i) {
      RawDrkParams raw = RawDrkParams::zeros(8, 0);
      raw.center_raw = Vec3(1.6 * (unit(rng) - 0.5), 1.6 * (unit(rng) - 0.5), 1.3 + unit(rng));
      raw.quat_raw =
          Vec4(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
      for (int key = 0; key < 8; ++key) {
        raw.scale_raw[key] = std::log(0.35) + 2.2 * (unit(rng) - 0.5);
        raw.angle_raw[key] = 2.0 * (unit(rng) - 0.5);
      }
      raw.opacity_raw = sigmoid_inverse(0.6);
      prims.push_back(activate(raw));
    }
    Camera cam = testutil::simple_camera(48, 40);
    KernelConfig cfg;
    tau[0] += eval_sorting(prims, cam, cfg, PresortMode::NearestDepth, true).kendall_tau;
    tau[1] += eval_sorting(prims, cam, cfg, PresortMode::CenterDepth, true).kendall_tau;
    tau[2] += eval_sorting(prims, cam, cfg, PresortMode::None, true).kendall_tau;
    tau[3] += eval_sorting(prims, cam, cfg, PresortMode::None, false).kendall_tau;
  }
  CHECK(tau[0] >= tau[1]);
  CHECK(tau[1] >= tau[2]);
  CHECK(tau[2] >= tau[3]);
}

TEST_SUITE_END();
