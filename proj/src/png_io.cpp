#include "poseg/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "poseg/errors.hpp"

namespace poseg {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// libpng reports errors via longjmp. All C++ objects with destructors are
// created before setjmp or owned outside the jump region; inside it we only
// touch libpng structs and raw pointers.
void png_fail(png_structp, png_const_charp) { /* control returns via longjmp */ }

}  // namespace

Tensor<uint8_t> read_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw MissingFile(path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, nullptr);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }

  Tensor<uint8_t> out;
  std::vector<png_bytep> row_ptrs;
  std::vector<uint8_t> rows;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ChecksumMismatch("png decode failed: " + path);
  }

  png_init_io(png, file.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  // Normalize everything to 8-bit gray or RGB.
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = int(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ChecksumMismatch("png has unsupported channel count: " + path);
  }

  size_t stride = size_t(w) * size_t(channels);
  rows.resize(stride * h);
  row_ptrs.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) row_ptrs[r] = rows.data() + size_t(r) * stride;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, info);
  png_destroy_read_struct(&png, &info, nullptr);

  out = Tensor<uint8_t>({channels, int(h), int(w)});
  for (png_uint_32 r = 0; r < h; ++r)
    for (png_uint_32 c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch)
        out.v[(size_t(ch) * h + r) * w + c] = rows[size_t(r) * stride + size_t(c) * channels + ch];
  return out;
}

void write_png(const std::string& path, const Tensor<uint8_t>& img) {
  if (img.ndim() != 3 || (img.shape[0] != 1 && img.shape[0] != 3))
    throw ShapeMismatch("write_png wants [1|3,H,W], got " + img.shape_str());
  int channels = img.shape[0], h = img.shape[1], w = img.shape[2];

  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw MissingFile("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }

  std::vector<uint8_t> rows(size_t(h) * w * channels);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch)
        rows[(size_t(r) * w + c) * channels + ch] = img.v[(size_t(ch) * h + r) * w + c];
  std::vector<png_bytep> row_ptrs;
  row_ptrs.resize(size_t(h));
  for (int r = 0; r < h; ++r) row_ptrs[size_t(r)] = rows.data() + size_t(r) * w * channels;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png encode failed: " + path);
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

}  // namespace poseg
