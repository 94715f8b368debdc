#pragma once

#include <cstddef>
#include <vector>

#include "drk/types.hpp"

namespace drk {

// Dense row-major image, interleaved channels, values nominally in [0, 1].
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  // Quantize to 8-bit levels and back, matching what an 8-bit file stores.
  Image quantized() const;
};

Image quantize_8bit(const Image& img);

}  // namespace drk
