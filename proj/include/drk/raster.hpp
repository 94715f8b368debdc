#pragma once

#include <cstdint>
#include <vector>

#include "drk/core.hpp"
#include "drk/geometry.hpp"
#include "drk/image.hpp"

namespace drk {

enum class PresortMode { None, CenterDepth, NearestDepth };

struct TileEntry {
  int prim_id = -1;
  double key = 0;  // presort key, ascending
};

struct TileBinning {
  int tile_size = 16;
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<TileEntry>> tiles;

  std::vector<TileEntry>& tile(int tx, int ty) { return tiles[ty * tiles_x + tx]; }
  const std::vector<TileEntry>& tile(int tx, int ty) const { return tiles[ty * tiles_x + tx]; }
};

// Assigns primitives to the 16x16 tiles their projected culling polygon can
// touch, dilated by the low-pass support, and presorts each tile list.
TileBinning bin_primitives(const std::vector<DrkPrimitive>& prims, const Camera& cam,
                           const KernelConfig& cfg, PresortMode presort = PresortMode::NearestDepth);

// Bounded depth-ordered insertion buffer, capacity 8.
class SortCache {
 public:
  static constexpr int kCapacity = 8;
  struct Entry {
    double depth = 0;
    int id = -1;
    double u = 0, v = 0;
  };
  enum class Result { None, Popped, Finished };

  // One streaming step: a valid incoming entry is insert-sorted; an invalid
  // one (end marker) drains the head. When full, the smallest depth among
  // cache plus incoming pops for processing.
  Result step(const Entry* incoming, Entry* popped);

  int size() const { return size_; }
  bool empty() const { return size_ == 0; }

 private:
  Entry entries_[kCapacity];
  int size_ = 0;
};

struct FrameBuffers {
  Image color;   // H x W x 3
  Image depth;   // H x W, alpha-weighted expected intersection depth
  Image normal;  // H x W x 3, alpha-weighted camera-facing normals
  Image alpha;   // H x W accumulated opacity
  Vec3 background = Vec3::Ones();
};

// One composited primitive at one pixel, in blend order.
struct BlendRecord {
  int prim_id = -1;
  double u = 0, v = 0;
  double depth = 0;        // r_t
  double alpha = 0;        // alpha after the low-pass floor, clamped
  bool lowpass_active = false;
};

struct ReplayBuffer {
  int width = 0, height = 0;
  std::vector<std::vector<BlendRecord>> pixels;  // row-major

  const std::vector<BlendRecord>& at(int x, int y) const { return pixels[y * width + x]; }
};

struct RenderOptions {
  KernelConfig kernel;
  Vec3 background = Vec3::Ones();
  int threads = 1;             // 0 = hardware concurrency
  int sh_degree = 3;           // active SH degree (clamped to stored coefficients)
  bool use_cache = true;       // cache sorting on/off
  bool exact_sort = false;     // oracle: full per-pixel sort by r_t
  PresortMode presort = PresortMode::NearestDepth;
  double early_stop_transmittance = 1e-4;
};

FrameBuffers render(const std::vector<DrkPrimitive>& prims, const Camera& cam,
                    const RenderOptions& opt, ReplayBuffer* replay = nullptr);

// Sorting-order study: streams every tile candidate with a valid ray-plane
// hit through the configured pipeline and compares the processed depth
// sequence per pixel against the exactly sorted one.
struct SortingMetrics {
  double accuracy = 0;     // fraction of pixels processed in sorted order
  double kendall_tau = 0;  // mean over pixels
  double mae = 0;          // mean |processed - sorted| depth error
  long pixels = 0;         // pixels with at least two candidates
};

SortingMetrics eval_sorting(const std::vector<DrkPrimitive>& prims, const Camera& cam,
                            const KernelConfig& cfg, PresortMode presort, bool use_cache);

int resolve_thread_count(int requested);

}  // namespace drk
