#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fcd/data_model.hpp"

namespace fcd {

struct Rgb8Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // interleaved

  Rgb pixel(int y, int x) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
};

inline constexpr Rgb kIgnoreColor{128, 128, 128};

/// Class colours from the taxonomy; ignore pixels are grey.
inline Rgb8Image render_prediction(const LabelMap& pred, const ClassTaxonomy& t) {
  Rgb8Image img{pred.height, pred.width, std::vector<std::uint8_t>(pred.values.size() * 3)};
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const int k = pred.values[i];
    Rgb c = kIgnoreColor;
    if (k != kIgnoreLabel) {
      if (k >= t.size()) throw std::out_of_range("render: class " + std::to_string(k) + " not in taxonomy");
      c = t.classes[k].color;
    }
    img.rgb[3 * i] = c.r;
    img.rgb[3 * i + 1] = c.g;
    img.rgb[3 * i + 2] = c.b;
  }
  return img;
}

/// Binary error map: TP white, FP red, FN blue, TN black, ignore grey.
inline Rgb8Image render_bcd_diff(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) throw std::invalid_argument("render: shape mismatch");
  Rgb8Image img{pred.height, pred.width, std::vector<std::uint8_t>(pred.values.size() * 3)};
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    Rgb c;
    if (gt.values[i] == kIgnoreLabel) {
      c = kIgnoreColor;
    } else {
      const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
      if (p && g) c = {255, 255, 255};
      else if (p) c = {255, 0, 0};
      else if (g) c = {0, 0, 255};
      else c = {0, 0, 0};
    }
    img.rgb[3 * i] = c.r;
    img.rgb[3 * i + 1] = c.g;
    img.rgb[3 * i + 2] = c.b;
  }
  return img;
}

}  // namespace fcd
