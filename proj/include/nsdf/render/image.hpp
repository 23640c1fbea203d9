#pragma once

#include <filesystem>

#include "nsdf/common.hpp"

namespace nsdf::render {

/// Pixel-major float image: row (y * width + x) of `data` holds the channels of pixel (x, y).
struct Image {
  int width = 0;
  int height = 0;
  MatX data;  // (width*height) x channels

  Image() = default;
  Image(int w, int h, int channels, double fill = 0.0) : width(w), height(h), data(MatX::Constant(w * h, channels, fill)) {}
  Image(int w, int h, MatX pixels);

  [[nodiscard]] int channels() const { return static_cast<int>(data.cols()); }
  [[nodiscard]] Eigen::Index pixel_count() const { return data.rows(); }
  double& at(int x, int y, int c) { return data(static_cast<Eigen::Index>(y) * width + x, c); }
  [[nodiscard]] double at(int x, int y, int c) const { return data(static_cast<Eigen::Index>(y) * width + x, c); }
};

/// 8-bit PNG with 1, 3 or 4 channels; values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);
/// Decodes to [0, 1]. Palette and 16-bit inputs are expanded/reduced to 8-bit first.
Image read_png(const std::filesystem::path& path);

/// Raw little-endian float32 planar: u32 width, u32 height, u32 channels, then channel-major samples.
std::vector<float> to_planar(const Image& image);
Image from_planar(int width, int height, int channels, const std::vector<float>& planar);
void write_raw(const std::filesystem::path& path, const Image& image);
Image read_raw(const std::filesystem::path& path);

}  // namespace nsdf::render
