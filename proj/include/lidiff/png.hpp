#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "lidiff/error.hpp"
#include "lidiff/projection.hpp"

namespace lidiff {

/// Writes an image as 16-bit grayscale PNG; values are clamped to [0, 1]
/// and scaled to 0..65535.
inline void write_png16(const std::filesystem::path& path, const RangeImage& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  require(fp != nullptr, Errc::io, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, Errc::io, "libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    fail(Errc::io, "libpng initialisation failed");
  }
  const auto h = static_cast<png_uint_32>(img.height());
  const auto w = static_cast<png_uint_32>(img.width());
  // big-endian samples, as PNG stores them
  std::vector<png_byte> buf(static_cast<std::size_t>(h) * w * 2);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.data[i]), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    buf[2 * i] = static_cast<png_byte>(q >> 8);
    buf[2 * i + 1] = static_cast<png_byte>(q & 0xff);
  }
  std::vector<png_bytep> rows(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = buf.data() + static_cast<std::size_t>(r) * w * 2;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::io, "failed writing PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads a 16-bit grayscale PNG back into [0, 1] values.
inline std::vector<float> read_png16(const std::filesystem::path& path, std::size_t& height,
                                     std::size_t& width) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "rb"), &std::fclose);
  require(fp != nullptr, Errc::io, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, Errc::io, "libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(Errc::io, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(Errc::format, "failed reading PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  const bool ok = png_get_bit_depth(png, info) == 16 && png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY;
  height = png_get_image_height(png, info);
  width = png_get_image_width(png, info);
  std::vector<float> out;
  if (ok) {
    png_bytepp rows = png_get_rows(png, info);
    out.reserve(height * width);
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) {
        const unsigned v = (static_cast<unsigned>(rows[r][2 * c]) << 8) | rows[r][2 * c + 1];
        out.push_back(static_cast<float>(v / 65535.0));
      }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  require(ok, Errc::format, path.string() + " is not a 16-bit grayscale PNG");
  return out;
}

}  // namespace lidiff
