#include "rsup/pngio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace rsup {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

PngImage read_png_gray(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw std::runtime_error("not a PNG file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG decode error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported PNG (need 8/16-bit grayscale): " +
                             path);
  }
  if (depth == 16) png_set_swap(png);  // stored big-endian in the stream

  PngImage img;
  img.h = (int)png_get_image_height(png, info);
  img.w = (int)png_get_image_width(png, info);
  img.bit_depth = depth;
  img.v.resize((size_t)img.h * img.w);

  std::vector<png_bytep> rows(img.h);
  std::vector<uint8_t> buf8;
  if (depth == 8) {
    buf8.resize((size_t)img.h * img.w);
    for (int i = 0; i < img.h; ++i) rows[i] = buf8.data() + (size_t)i * img.w;
  } else {
    for (int i = 0; i < img.h; ++i)
      rows[i] = reinterpret_cast<png_bytep>(img.v.data() + (size_t)i * img.w);
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (depth == 8)
    for (size_t i = 0; i < buf8.size(); ++i) img.v[i] = buf8[i];
  return img;
}

void write_png_gray(const std::string& path, const PngImage& img) {
  if (img.bit_depth != 8 && img.bit_depth != 16)
    throw std::invalid_argument("write_png_gray: bit depth must be 8 or 16");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, img.bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (img.bit_depth == 16) png_set_swap(png);

  std::vector<uint8_t> buf8;
  std::vector<png_bytep> rows(img.h);
  if (img.bit_depth == 8) {
    buf8.resize((size_t)img.h * img.w);
    for (size_t i = 0; i < buf8.size(); ++i)
      buf8[i] = (uint8_t)std::min<uint16_t>(img.v[i], 255);
    for (int i = 0; i < img.h; ++i) rows[i] = buf8.data() + (size_t)i * img.w;
  } else {
    for (int i = 0; i < img.h; ++i)
      rows[i] = reinterpret_cast<png_bytep>(
          const_cast<uint16_t*>(img.v.data() + (size_t)i * img.w));
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image png_to_pm1(const PngImage& png) {
  Image img(png.h, png.w);
  const float maxv = png.bit_depth == 8 ? 255.0f : 65535.0f;
  for (size_t i = 0; i < png.v.size(); ++i)
    img.v[i] = 2.0f * (png.v[i] / maxv) - 1.0f;
  return img;
}

PngImage pm1_to_png(const Image& img, int bit_depth) {
  PngImage out;
  out.h = img.h;
  out.w = img.w;
  out.bit_depth = bit_depth;
  out.v.resize((size_t)img.h * img.w);
  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  for (int64_t i = 0; i < img.size(); ++i) {
    const double u = std::clamp((img.v[i] + 1.0) * 0.5, 0.0, 1.0);
    out.v[i] = (uint16_t)std::lround(u * maxv);
  }
  return out;
}

}  // namespace rsup
