#include "fsmt/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "fsmt/errors.hpp"

namespace fsmt {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open image " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unreadable image " + path.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize everything to 8-bit RGB.
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  ImageU8 out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);

  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y)
    rows[static_cast<std::size_t>(y)] = out.pixels.data() + static_cast<std::size_t>(y) * out.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw DataError("write_png: pixel buffer size mismatch");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write image " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing image " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() +
                                             static_cast<std::size_t>(y) * image.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<float> to_chw_float(const ImageU8& image) {
  const int h = image.height, w = image.width;
  std::vector<float> out(static_cast<std::size_t>(3) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out[static_cast<std::size_t>((c * h + y) * w + x)] =
            static_cast<float>(image.pixels[static_cast<std::size_t>((y * w + x) * 3 + c)]) /
            255.0f;
  return out;
}

std::vector<float> resize_bilinear_chw(const float* src, int channels, int height, int width,
                                       int out_height, int out_width) {
  std::vector<float> out(static_cast<std::size_t>(channels) * out_height * out_width);
  const double sy = static_cast<double>(height) / out_height;
  const double sx = static_cast<double>(width) / out_width;
  for (int i = 0; i < out_height; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, height - 1);
    const double wy = fy - y0;
    for (int j = 0; j < out_width; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < channels; ++c) {
        const float* p = src + static_cast<std::size_t>(c) * height * width;
        const double v = (1.0 - wy) * ((1.0 - wx) * p[y0 * width + x0] + wx * p[y0 * width + x1]) +
                         wy * ((1.0 - wx) * p[y1 * width + x0] + wx * p[y1 * width + x1]);
        out[static_cast<std::size_t>((c * out_height + i) * out_width + j)] =
            static_cast<float>(std::min(1.0, std::max(0.0, v)));
      }
    }
  }
  return out;
}

ImageU8 from_chw_float(const float* data, int channels, int height, int width) {
  if (channels != 3) throw DataError("from_chw_float: expected 3 channels");
  ImageU8 out;
  out.width = width;
  out.height = height;
  out.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = data[(c * height + y) * width + x];
        v = std::min(1.0f, std::max(0.0f, v));
        out.pixels[static_cast<std::size_t>((y * width + x) * 3 + c)] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return out;
}

}  // namespace fsmt
