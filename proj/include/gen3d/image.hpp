#pragma once

// RGB float images and 8-bit PNG I/O (values linearized by /255, no gamma).

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include <png.h>

#include "gen3d/errors.hpp"

namespace gen3d {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // row-major, RGB interleaved

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  return FilePtr(std::fopen(path.c_str(), mode));
}

inline unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  auto fp = detail::open_file(path, "wb");
  if (!fp) throw IoError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or text chunks: identical images give identical files.
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = detail::to_byte(img.at(x, y, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace detail {

/// Reads the header (and optionally the pixels) of an 8-bit PNG as RGB.
inline Image read_png_impl(const std::filesystem::path& path, bool pixels) {
  auto fp = open_file(path, "rb");
  if (!fp) throw IoError("cannot open image: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  Image img;
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed reading PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  if (pixels) {
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    row.resize(png_get_rowbytes(png, info));
    for (int y = 0; y < img.height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(row[static_cast<std::size_t>(x) * 3 + c]) / 255.0f;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace detail

inline Image read_png(const std::filesystem::path& path) { return detail::read_png_impl(path, true); }

/// Width and height only; pixel data is left empty.
inline Image read_png_header(const std::filesystem::path& path) { return detail::read_png_impl(path, false); }

}  // namespace gen3d
