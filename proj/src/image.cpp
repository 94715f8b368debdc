#include "drk/image.hpp"

#include <cmath>

namespace drk {

Image quantize_8bit(const Image& img) {
  Image out = img;
  for (double& v : out.data) {
    const double q = std::round(std::min(1.0, std::max(0.0, v)) * 255.0);
    v = q / 255.0;
  }
  return out;
}

Image Image::quantized() const { return quantize_8bit(*this); }

}  // namespace drk
