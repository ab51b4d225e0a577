#include "darkforge/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "darkforge/errors.hpp"

namespace darkforge {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_planar(const std::filesystem::path& path, std::size_t width, std::size_t height, std::size_t channels,
                  const std::vector<double>& planar, unsigned bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw ArgumentError("PNG bit depth must be 8 or 16");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  const std::size_t bytes = bit_depth / 8;
  const double max_code = bit_depth == 8 ? 255.0 : 65535.0;
  const std::size_t stride = width * channels * bytes;
  const std::size_t plane = width * height;
  std::vector<unsigned char> pixels(stride * height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = std::clamp(planar[c * plane + y * width + x], 0.0, 1.0);
        const auto code = static_cast<unsigned>(std::lround(v * max_code));
        unsigned char* dst = pixels.data() + y * stride + (x * channels + c) * bytes;
        if (bytes == 1) {
          dst[0] = static_cast<unsigned char>(code);
        } else {
          dst[0] = static_cast<unsigned char>(code >> 8);  // PNG is big-endian
          dst[1] = static_cast<unsigned char>(code & 0xFF);
        }
      }
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               static_cast<int>(bit_depth), channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& img, unsigned bit_depth) {
  write_planar(path, img.width, img.height, 3, img.data, bit_depth);
}

void write_png(const std::filesystem::path& path, const Plane& img, unsigned bit_depth) {
  write_planar(path, img.width, img.height, 1, img.data, bit_depth);
}

PngImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw LoadError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("libpng initialisation failed");
  }
  PngImage out;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("PNG decode failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = static_cast<std::size_t>(channels);
  out.bit_depth = static_cast<unsigned>(depth);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  if (out.channels != 1 && out.channels != 3) throw LoadError(path.string() + ": unsupported PNG layout");
  const std::size_t bytes = out.bit_depth / 8;
  const double max_code = out.bit_depth == 16 ? 65535.0 : 255.0;
  const std::size_t plane = out.width * out.height;
  out.data.resize(plane * out.channels);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < out.channels; ++c) {
        const unsigned char* src = rows[y] + (x * out.channels + c) * bytes;
        const unsigned code = bytes == 1 ? src[0] : (static_cast<unsigned>(src[0]) << 8) | src[1];
        out.data[c * plane + y * out.width + x] = code / max_code;
      }
  return out;
}

RgbImage png_to_rgb(const PngImage& png) {
  RgbImage img(png.width, png.height);
  const std::size_t plane = png.width * png.height;
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src = png.channels == 3 ? c : 0;
    std::copy_n(png.data.begin() + static_cast<std::ptrdiff_t>(src * plane), plane, img.channel(c).begin());
  }
  return img;
}

Plane png_to_plane(const PngImage& png) {
  Plane p(png.width, png.height);
  const std::size_t plane = png.width * png.height;
  if (png.channels == 1) {
    std::copy_n(png.data.begin(), plane, p.data.begin());
  } else {
    for (std::size_t i = 0; i < plane; ++i) {
      p.data[i] = 0.299 * png.data[i] + 0.587 * png.data[plane + i] + 0.114 * png.data[2 * plane + i];
    }
  }
  return p;
}

}  // namespace darkforge
