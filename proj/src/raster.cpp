#include "drk/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace drk {

namespace {

constexpr double kNearClip = 1e-6;

// Sutherland-Hodgman clip of a camera-space polygon against z >= kNearClip.
std::vector<Vec3> clip_near(const std::vector<Vec3>& poly) {
  std::vector<Vec3> out;
  const int n = static_cast<int>(poly.size());
  for (int i = 0; i < n; ++i) {
    const Vec3& a = poly[i];
    const Vec3& b = poly[(i + 1) % n];
    const bool a_in = a.z() >= kNearClip;
    const bool b_in = b.z() >= kNearClip;
    if (a_in) out.push_back(a);
    if (a_in != b_in) {
      const double t = (kNearClip - a.z()) / (b.z() - a.z());
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

// Andrew monotone chain; returns CCW hull (y-down image coords, orientation irrelevant).
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return a == b; }),
            pts.end());
  const int n = static_cast<int>(pts.size());
  if (n <= 2) return pts;
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const int lower = k + 1;
  for (int i = n - 2; i >= 0; --i) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Separating-axis overlap between a convex polygon and an axis-aligned
// rectangle. Degenerate polygons (point, segment) are handled by the same
// projections.
bool hull_overlaps_rect(const std::vector<Vec2>& hull, double x0, double y0, double x1,
                        double y1) {
  const int n = static_cast<int>(hull.size());
  if (n == 0) return false;
  double hx0 = hull[0].x(), hx1 = hull[0].x(), hy0 = hull[0].y(), hy1 = hull[0].y();
  for (const Vec2& p : hull) {
    hx0 = std::min(hx0, p.x());
    hx1 = std::max(hx1, p.x());
    hy0 = std::min(hy0, p.y());
    hy1 = std::max(hy1, p.y());
  }
  if (hx1 < x0 || hx0 > x1 || hy1 < y0 || hy0 > y1) return false;
  if (n <= 1) return true;
  // Polygon edge normals as the remaining axes.
  const Vec2 corners[4] = {Vec2(x0, y0), Vec2(x1, y0), Vec2(x1, y1), Vec2(x0, y1)};
  for (int i = 0; i < n; ++i) {
    const Vec2 e = hull[(i + 1) % n] - hull[i];
    if (e.squaredNorm() < 1e-24) continue;
    const Vec2 axis(-e.y(), e.x());
    double pmin = axis.dot(hull[0]), pmax = pmin;
    for (const Vec2& p : hull) {
      const double d = axis.dot(p);
      pmin = std::min(pmin, d);
      pmax = std::max(pmax, d);
    }
    double rmin = axis.dot(corners[0]), rmax = rmin;
    for (const Vec2& c : corners) {
      const double d = axis.dot(c);
      rmin = std::min(rmin, d);
      rmax = std::max(rmax, d);
    }
    if (pmax < rmin || pmin > rmax) return false;
  }
  return true;
}

double nearest_depth_key(const DrkPrimitive& prim, const Camera& cam, const KernelConfig& cfg,
                         double x0, double y0, double x1, double y1) {
  const double xs[5] = {x0, x1, x1, x0, 0.5 * (x0 + x1)};
  const double ys[5] = {y0, y0, y1, y1, 0.5 * (y0 + y1)};
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 5; ++i) {
    const Ray ray = pixel_ray(cam, xs[i], ys[i]);
    Intersection hit;
    if (classify_intersect(ray, prim.center, prim.rot, cfg.grazing_eps, &hit) == HitStatus::Hit)
      best = std::min(best, hit.depth);
  }
  if (std::isinf(best)) {
    Vec3 proj;
    if (try_project_point(cam, prim.center, &proj)) best = proj.z();
  }
  return best;
}

}  // namespace

TileBinning bin_primitives(const std::vector<DrkPrimitive>& prims, const Camera& cam,
                           const KernelConfig& cfg, PresortMode presort) {
  TileBinning bins;
  bins.tiles_x = (cam.width + bins.tile_size - 1) / bins.tile_size;
  bins.tiles_y = (cam.height + bins.tile_size - 1) / bins.tile_size;
  bins.tiles.assign(static_cast<size_t>(bins.tiles_x) * bins.tiles_y, {});

  // Low-pass support: the filter floor can reach alpha_min this many pixels
  // away from the projected center even when the kernel itself is below it.
  const double lp_pad =
      cfg.lowpass_radius * std::sqrt(2.0 * std::log(1.0 / cfg.alpha_min)) + 1e-9;

  for (int pid = 0; pid < static_cast<int>(prims.size()); ++pid) {
    const DrkPrimitive& prim = prims[pid];
    const auto factor = binning_radius_factor(prim.opacity, prim.tau, cfg.alpha_min);
    if (!factor) continue;  // never visible at alpha_min

    // Conservative support polygon. The level set can bulge outside the
    // chord between radial endpoints, so each angular gap is subdivided and
    // bounded per sub-arc: along direction theta the squared falloff weight
    // is w = eta rho1^2 + (1 - eta) / sbar^2, and both terms reach their
    // sub-arc minimum at a sub-arc endpoint (the cosine blend is monotone
    // in theta; rho1 is the reciprocal chord distance, maximal at an
    // endpoint). The support radius over the sub-arc is then at most
    // sqrt(c / w_lb), and wedge vertices inflated by 1/cos(half sub-gap)
    // cover the whole arc.
    const double support_c = (*factor) * (*factor);
    const int k_count = prim.basis_count();
    std::vector<Vec3> poly_cam;
    poly_cam.reserve(8 * k_count);
    for (int k = 0; k < k_count; ++k) {
      const int hi = (k + 1) % k_count;
      const double a_lo = k + 1 < k_count ? prim.angles[k] : prim.angles[k] - 2.0 * M_PI;
      const double a_hi = k + 1 < k_count ? prim.angles[hi] : prim.angles[0];
      const double gap = a_hi - a_lo;
      const double s_lo = prim.scales[k], s_hi = prim.scales[hi];
      const Vec2 e_lo = prim.endpoint(k), e_hi = prim.endpoint(hi);
      const double det = e_lo.x() * e_hi.y() - e_lo.y() * e_hi.x();

      auto weight_at = [&](double a) {
        const double delta = (a - a_lo) * M_PI / gap;
        const double c = std::cos(delta);
        const double inv_sbar =
            (1.0 + c) / (2.0 * s_lo * s_lo) + (1.0 - c) / (2.0 * s_hi * s_hi);
        const Vec2 d(std::cos(a), std::sin(a));
        const double ca = (e_hi.y() * d.x() - e_hi.x() * d.y()) / det;
        const double cb = (-e_lo.y() * d.x() + e_lo.x() * d.y()) / det;
        const double rho1 = std::abs(ca) + std::abs(cb);
        return std::make_pair(rho1, inv_sbar);
      };

      auto radius_true = [&](const std::pair<double, double>& w) {
        const double total = prim.eta * w.first * w.first + (1.0 - prim.eta) * w.second;
        return std::sqrt(support_c / std::max(total, 1e-12));
      };

      // Adaptive wedges: bisect while the conservative sub-arc bound stays
      // far above the true radius at either end, so tapering lobes keep a
      // tight outline instead of one fat wedge.
      auto emit = [&](auto&& self, double a0, double a1, std::pair<double, double> w0,
                      std::pair<double, double> w1, int depth) -> void {
        const double rho1_min = std::min(w0.first, w1.first);
        const double inv_sbar_min = std::min(w0.second, w1.second);
        const double w_lb = prim.eta * rho1_min * rho1_min + (1.0 - prim.eta) * inv_sbar_min;
        const double bound = std::sqrt(support_c / std::max(w_lb, 1e-12)) /
                             std::cos(0.5 * (a1 - a0));
        if (depth < 9 && a1 - a0 > 2e-3 &&
            bound > 1.25 * std::min(radius_true(w0), radius_true(w1))) {
          const double mid = 0.5 * (a0 + a1);
          const auto wm = weight_at(mid);
          self(self, a0, mid, w0, wm, depth + 1);
          self(self, mid, a1, wm, w1, depth + 1);
          return;
        }
        for (double a : {a0, a1}) {
          const Vec3 world = prim.center + bound * (std::cos(a) * prim.axis_x() +
                                                    std::sin(a) * prim.axis_y());
          poly_cam.push_back(cam.to_camera(world));
        }
      };
      const int coarse = std::max(1, static_cast<int>(std::ceil(gap / (M_PI / 8.0))));
      auto prev = weight_at(a_lo);
      for (int j = 0; j < coarse; ++j) {
        const double a0 = a_lo + gap * j / coarse;
        const double a1 = a_lo + gap * (j + 1) / coarse;
        const auto next = weight_at(a1);
        emit(emit, a0, a1, prev, next, 0);
        prev = next;
      }
    }
    poly_cam = clip_near(poly_cam);
    if (poly_cam.empty()) continue;  // fully behind the camera

    std::vector<Vec2> projected;
    projected.reserve(poly_cam.size());
    for (const Vec3& p : poly_cam)
      projected.emplace_back(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    const std::vector<Vec2> hull = convex_hull(std::move(projected));
    if (hull.empty()) continue;

    double hx0 = hull[0].x(), hx1 = hx0, hy0 = hull[0].y(), hy1 = hy0;
    for (const Vec2& p : hull) {
      hx0 = std::min(hx0, p.x());
      hx1 = std::max(hx1, p.x());
      hy0 = std::min(hy0, p.y());
      hy1 = std::max(hy1, p.y());
    }
    const int tx0 = std::max(0, static_cast<int>(std::floor((hx0 - lp_pad) / bins.tile_size)));
    const int tx1 = std::min(bins.tiles_x - 1,
                             static_cast<int>(std::floor((hx1 + lp_pad) / bins.tile_size)));
    const int ty0 = std::max(0, static_cast<int>(std::floor((hy0 - lp_pad) / bins.tile_size)));
    const int ty1 = std::min(bins.tiles_y - 1,
                             static_cast<int>(std::floor((hy1 + lp_pad) / bins.tile_size)));

    for (int ty = ty0; ty <= ty1; ++ty) {
      for (int tx = tx0; tx <= tx1; ++tx) {
        const double x0 = tx * bins.tile_size, y0 = ty * bins.tile_size;
        const double x1 = x0 + bins.tile_size, y1 = y0 + bins.tile_size;
        if (!hull_overlaps_rect(hull, x0 - lp_pad, y0 - lp_pad, x1 + lp_pad, y1 + lp_pad))
          continue;
        double key = 0;
        switch (presort) {
          case PresortMode::None:
            key = static_cast<double>(pid);
            break;
          case PresortMode::CenterDepth: {
            Vec3 proj;
            key = try_project_point(cam, prim.center, &proj)
                      ? proj.z()
                      : std::numeric_limits<double>::infinity();
            break;
          }
          case PresortMode::NearestDepth:
            key = nearest_depth_key(prim, cam, cfg, x0, y0, x1, y1);
            break;
        }
        bins.tile(tx, ty).push_back({pid, key});
      }
    }
  }

  for (auto& list : bins.tiles)
    std::sort(list.begin(), list.end(), [](const TileEntry& a, const TileEntry& b) {
      return a.key < b.key || (a.key == b.key && a.prim_id < b.prim_id);
    });
  return bins;
}

SortCache::Result SortCache::step(const Entry* incoming, Entry* popped) {
  if (size_ == 0) {
    if (!incoming) return Result::Finished;
    entries_[0] = *incoming;
    size_ = 1;
    return Result::None;
  }
  if (!incoming) {
    *popped = entries_[0];
    --size_;
    for (int i = 0; i < size_; ++i) entries_[i] = entries_[i + 1];
    return Result::Popped;
  }
  if (size_ == kCapacity) {
    if (incoming->depth < entries_[0].depth) {
      // Incoming is the new minimum; it pops straight through.
      *popped = *incoming;
      return Result::Popped;
    }
    *popped = entries_[0];
    int pos = 1;
    while (pos < kCapacity && entries_[pos].depth <= incoming->depth) {
      entries_[pos - 1] = entries_[pos];
      ++pos;
    }
    entries_[pos - 1] = *incoming;
    return Result::Popped;
  }
  int pos = size_;
  while (pos > 0 && entries_[pos - 1].depth > incoming->depth) {
    entries_[pos] = entries_[pos - 1];
    --pos;
  }
  entries_[pos] = *incoming;
  ++size_;
  return Result::None;
}

namespace {

struct PixelState {
  Vec3 color = Vec3::Zero();
  double depth = 0;
  Vec3 normal = Vec3::Zero();
  double alpha = 0;
  double transmittance = 1.0;
};

struct RenderContext {
  const std::vector<DrkPrimitive>* prims = nullptr;
  const Camera* cam = nullptr;
  const RenderOptions* opt = nullptr;
  const TileBinning* bins = nullptr;
  std::vector<Vec3> proj_center;   // projected primitive centers
  std::vector<char> has_proj;
  FrameBuffers* fb = nullptr;
  ReplayBuffer* replay = nullptr;
};

// Composites one popped candidate; returns false once the pixel saturates.
bool composite_candidate(const RenderContext& ctx, const Ray& ray, double px, double py,
                         const SortCache::Entry& e, PixelState* state,
                         std::vector<BlendRecord>* replay_px) {
  const DrkPrimitive& prim = (*ctx.prims)[e.id];
  const RenderOptions& opt = *ctx.opt;

  const double a_kernel = alpha(e.u, e.v, prim);
  double a_tilde = a_kernel;
  bool lowpass_active = false;
  const double cos_view = std::abs(ray.dir.dot(prim.normal()));
  if (ctx.has_proj[e.id]) {
    const double dpw = px - ctx.proj_center[e.id].x();
    const double dph = py - ctx.proj_center[e.id].y();
    const double filter = low_pass_filter_term(dpw, dph, cos_view, prim.opacity, opt.kernel);
    if (filter > a_kernel) {
      a_tilde = filter;
      lowpass_active = true;
    }
  }
  if (a_tilde < opt.kernel.alpha_min) return true;
  a_tilde = std::min(a_tilde, 1.0 - 1e-6);

  const Vec3 rgb = sh_eval(prim.sh, ray.dir, opt.sh_degree);
  const double sgn = ray.dir.dot(prim.normal()) < 0 ? 1.0 : -1.0;
  const Vec3 n = sgn * prim.normal();

  const double w = state->transmittance * a_tilde;
  state->color += w * rgb;
  state->depth += w * e.depth;
  state->normal += w * n;
  state->alpha += w;
  state->transmittance *= 1.0 - a_tilde;

  if (replay_px) replay_px->push_back({e.id, e.u, e.v, e.depth, a_tilde, lowpass_active});
  return state->transmittance >= opt.early_stop_transmittance;
}

void render_tile(const RenderContext& ctx, int tx, int ty) {
  const TileBinning& bins = *ctx.bins;
  const Camera& cam = *ctx.cam;
  const RenderOptions& opt = *ctx.opt;
  const auto& candidates = bins.tile(tx, ty);
  const int x0 = tx * bins.tile_size, y0 = ty * bins.tile_size;
  const int x1 = std::min(cam.width, x0 + bins.tile_size);
  const int y1 = std::min(cam.height, y0 + bins.tile_size);

  std::vector<SortCache::Entry> valid;
  valid.reserve(candidates.size());

  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const Ray ray = pixel_ray(cam, px, py);

      valid.clear();
      for (const TileEntry& cand : candidates) {
        const DrkPrimitive& prim = (*ctx.prims)[cand.prim_id];
        Intersection hit;
        if (classify_intersect(ray, prim.center, prim.rot, opt.kernel.grazing_eps, &hit) !=
            HitStatus::Hit)
          continue;
        valid.push_back({hit.depth, cand.prim_id, hit.u, hit.v});
      }

      PixelState state;
      std::vector<BlendRecord>* replay_px =
          ctx.replay ? &ctx.replay->pixels[y * cam.width + x] : nullptr;

      if (opt.exact_sort) {
        std::stable_sort(valid.begin(), valid.end(),
                         [](const SortCache::Entry& a, const SortCache::Entry& b) {
                           return a.depth < b.depth;
                         });
        for (const auto& e : valid)
          if (!composite_candidate(ctx, ray, px, py, e, &state, replay_px)) break;
      } else if (opt.use_cache) {
        SortCache cache;
        SortCache::Entry popped;
        bool saturated = false;
        for (size_t i = 0; i < valid.size() && !saturated; ++i) {
          if (cache.step(&valid[i], &popped) == SortCache::Result::Popped)
            saturated = !composite_candidate(ctx, ray, px, py, popped, &state, replay_px);
        }
        while (!saturated) {
          const auto r = cache.step(nullptr, &popped);
          if (r == SortCache::Result::Finished) break;
          saturated = !composite_candidate(ctx, ray, px, py, popped, &state, replay_px);
        }
      } else {
        for (const auto& e : valid)
          if (!composite_candidate(ctx, ray, px, py, e, &state, replay_px)) break;
      }

      state.color += state.transmittance * opt.background;
      FrameBuffers& fb = *ctx.fb;
      for (int c = 0; c < 3; ++c) {
        fb.color.at(x, y, c) = state.color[c];
        fb.normal.at(x, y, c) = state.normal[c];
      }
      fb.depth.at(x, y, 0) = state.depth;
      fb.alpha.at(x, y, 0) = state.alpha;
    }
  }
}

}  // namespace

int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

FrameBuffers render(const std::vector<DrkPrimitive>& prims, const Camera& cam,
                    const RenderOptions& opt, ReplayBuffer* replay) {
  FrameBuffers fb;
  fb.color = Image(cam.width, cam.height, 3);
  fb.depth = Image(cam.width, cam.height, 1);
  fb.normal = Image(cam.width, cam.height, 3);
  fb.alpha = Image(cam.width, cam.height, 1);
  fb.background = opt.background;
  if (replay) {
    replay->width = cam.width;
    replay->height = cam.height;
    replay->pixels.assign(static_cast<size_t>(cam.width) * cam.height, {});
  }

  const TileBinning bins = bin_primitives(prims, cam, opt.kernel, opt.presort);

  RenderContext ctx;
  ctx.prims = &prims;
  ctx.cam = &cam;
  ctx.opt = &opt;
  ctx.bins = &bins;
  ctx.fb = &fb;
  ctx.replay = replay;
  ctx.proj_center.resize(prims.size());
  ctx.has_proj.resize(prims.size());
  for (size_t i = 0; i < prims.size(); ++i)
    ctx.has_proj[i] = try_project_point(cam, prims[i].center, &ctx.proj_center[i]) ? 1 : 0;

  const int total_tiles = bins.tiles_x * bins.tiles_y;
  const int threads = std::min(resolve_thread_count(opt.threads), std::max(1, total_tiles));
  if (threads <= 1) {
    for (int t = 0; t < total_tiles; ++t) render_tile(ctx, t % bins.tiles_x, t / bins.tiles_x);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w) {
      const int lo = static_cast<int>(static_cast<long>(total_tiles) * w / threads);
      const int hi = static_cast<int>(static_cast<long>(total_tiles) * (w + 1) / threads);
      pool.emplace_back([&ctx, &bins, lo, hi] {
        for (int t = lo; t < hi; ++t) render_tile(ctx, t % bins.tiles_x, t / bins.tiles_x);
      });
    }
    for (auto& th : pool) th.join();
  }
  return fb;
}

SortingMetrics eval_sorting(const std::vector<DrkPrimitive>& prims, const Camera& cam,
                            const KernelConfig& cfg, PresortMode presort, bool use_cache) {
  const TileBinning bins = bin_primitives(prims, cam, cfg, presort);
  SortingMetrics m;
  double tau_sum = 0, mae_sum = 0;
  long ordered = 0, counted = 0;

  std::vector<double> processed, sorted;
  for (int ty = 0; ty < bins.tiles_y; ++ty) {
    for (int tx = 0; tx < bins.tiles_x; ++tx) {
      const auto& candidates = bins.tile(tx, ty);
      if (candidates.empty()) continue;
      const int x0 = tx * bins.tile_size, y0 = ty * bins.tile_size;
      const int x1 = std::min(cam.width, x0 + bins.tile_size);
      const int y1 = std::min(cam.height, y0 + bins.tile_size);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const Ray ray = pixel_ray(cam, x + 0.5, y + 0.5);
          processed.clear();
          if (use_cache) {
            SortCache cache;
            SortCache::Entry popped;
            for (const TileEntry& cand : candidates) {
              const DrkPrimitive& prim = prims[cand.prim_id];
              Intersection hit;
              if (classify_intersect(ray, prim.center, prim.rot, cfg.grazing_eps, &hit) !=
                  HitStatus::Hit)
                continue;
              SortCache::Entry e{hit.depth, cand.prim_id, hit.u, hit.v};
              if (cache.step(&e, &popped) == SortCache::Result::Popped)
                processed.push_back(popped.depth);
            }
            while (cache.step(nullptr, &popped) == SortCache::Result::Popped)
              processed.push_back(popped.depth);
          } else {
            for (const TileEntry& cand : candidates) {
              const DrkPrimitive& prim = prims[cand.prim_id];
              Intersection hit;
              if (classify_intersect(ray, prim.center, prim.rot, cfg.grazing_eps, &hit) !=
                  HitStatus::Hit)
                continue;
              processed.push_back(hit.depth);
            }
          }
          const int n = static_cast<int>(processed.size());
          if (n < 2) continue;
          sorted = processed;
          std::sort(sorted.begin(), sorted.end());

          long concordant = 0, discordant = 0;
          for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
              if (processed[i] < processed[j]) ++concordant;
              else if (processed[i] > processed[j]) ++discordant;
            }
          const double pairs = 0.5 * n * (n - 1);
          tau_sum += (concordant - discordant) / pairs;
          double mae = 0;
          for (int i = 0; i < n; ++i) mae += std::abs(processed[i] - sorted[i]);
          mae_sum += mae / n;
          if (discordant == 0) ++ordered;
          ++counted;
        }
      }
    }
  }
  m.pixels = counted;
  if (counted > 0) {
    m.accuracy = static_cast<double>(ordered) / counted;
    m.kendall_tau = tau_sum / counted;
    m.mae = mae_sum / counted;
  }
  return m;
}

}  // namespace drk
