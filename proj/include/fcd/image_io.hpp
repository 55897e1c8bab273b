#pragma once

// PNG I/O through libpng's simplified API.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/data_model.hpp"

namespace fcd {

namespace detail {

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, int& h, int& w) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
  }
  h = static_cast<int>(img.height);
  w = static_cast<int>(img.width);
  return buf;
}

inline void write_png(const std::filesystem::path& path, png_uint_32 format, int h, int w, const std::uint8_t* data) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

}  // namespace detail

/// 8-bit RGB is divided by 255.
inline RgbImage load_rgb_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto buf = detail::read_png(path, PNG_FORMAT_RGB, h, w);
  RgbImage img(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = static_cast<float>(buf[i]) / 255.f;
  return img;
}

inline std::vector<std::uint8_t> quantize_rgb(const RgbImage& img) {
  std::vector<std::uint8_t> buf(img.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const float v = std::clamp(img.pixels[i], 0.f, 1.f);
    buf[i] = static_cast<std::uint8_t>(std::lround(v * 255.f));
  }
  return buf;
}

inline void save_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
  auto buf = quantize_rgb(img);
  detail::write_png(path, PNG_FORMAT_RGB, img.height, img.width, buf.data());
}

inline void save_rgb8_png(const std::filesystem::path& path, int h, int w, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(h) * w * 3) throw std::invalid_argument("save_rgb8_png: size mismatch");
  detail::write_png(path, PNG_FORMAT_RGB, h, w, rgb.data());
}

inline LabelMap load_label_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto buf = detail::read_png(path, PNG_FORMAT_GRAY, h, w);
  LabelMap l(h, w);
  l.values = std::move(buf);
  return l;
}

inline void save_label_png(const std::filesystem::path& path, const LabelMap& label) {
  detail::write_png(path, PNG_FORMAT_GRAY, label.height, label.width, label.values.data());
}

}  // namespace fcd
