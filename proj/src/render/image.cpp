#include "nsdf/render/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "nsdf/io/binary.hpp"

namespace nsdf::render {

Image::Image(int w, int h, MatX pixels) : width(w), height(h), data(std::move(pixels)) {
  require(w >= 0 && h >= 0 && data.rows() == static_cast<Eigen::Index>(w) * h, "Image: pixel count mismatch");
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  const int c = image.channels();
  require(c == 1 || c == 3 || c == 4, "write_png: channels must be 1, 3 or 4");
  require(image.width > 0 && image.height > 0, "write_png: empty image");
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw RuntimeError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw RuntimeError("libpng init failed");
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * c);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeError("libpng write failed for " + path.string());
  }
  png_init_io(png, fp.get());
  const int color_type = c == 1 ? PNG_COLOR_TYPE_GRAY : (c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_RGBA);
  png_set_IHDR(png, info, image.width, image.height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int k = 0; k < c; ++k) {
        const double v = std::clamp(image.at(x, y, k), 0.0, 1.0);
        row[static_cast<std::size_t>(x) * c + k] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw RuntimeError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw RuntimeError("libpng init failed");
  Image out;
  std::vector<png_byte> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw RuntimeError("not a readable PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_byte type = png_get_color_type(png, info);
  if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = png_get_channels(png, info);
  buf.resize(static_cast<std::size_t>(w) * h * c);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * w * c;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  out = Image(w, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) out.at(x, y, k) = buf[(static_cast<std::size_t>(y) * w + x) * c + k] / 255.0;
  return out;
}

std::vector<float> to_planar(const Image& image) {
  std::vector<float> out(static_cast<std::size_t>(image.data.size()));
  std::size_t i = 0;
  for (int k = 0; k < image.channels(); ++k)
    for (Eigen::Index p = 0; p < image.pixel_count(); ++p) out[i++] = static_cast<float>(image.data(p, k));
  return out;
}

Image from_planar(int width, int height, int channels, const std::vector<float>& planar) {
  require(width > 0 && height > 0 && channels > 0, "from_planar: bad shape");
  require(planar.size() == static_cast<std::size_t>(width) * height * channels, "from_planar: payload size mismatch");
  Image out(width, height, channels);
  std::size_t i = 0;
  for (int k = 0; k < channels; ++k)
    for (Eigen::Index p = 0; p < out.pixel_count(); ++p) out.data(p, k) = planar[i++];
  return out;
}

void write_raw(const std::filesystem::path& path, const Image& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeError("cannot open " + path.string() + " for writing");
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(image.width));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(image.height));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(image.channels()));
  for (float v : to_planar(image)) io::write_le(os, v);
  if (!os) throw RuntimeError("write failed: " + path.string());
}

Image read_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeError("cannot open " + path.string());
  const auto w = io::read_le<std::uint32_t>(is);
  const auto h = io::read_le<std::uint32_t>(is);
  const auto c = io::read_le<std::uint32_t>(is);
  if (w == 0 || h == 0 || c == 0 || static_cast<std::uint64_t>(w) * h * c > (1ULL << 28))
    throw RuntimeError("implausible raw image header in " + path.string());
  std::vector<float> planar(static_cast<std::size_t>(w) * h * c);
  for (float& v : planar) v = io::read_le<float>(is);
  return from_planar(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c), planar);
}

}  // namespace nsdf::render
