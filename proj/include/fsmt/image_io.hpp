#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fsmt {

// 8-bit RGB image, row-major HWC.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // height*width*3
};

ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& image);

// [0,1] float CHW <-> 8-bit HWC conversions.
std::vector<float> to_chw_float(const ImageU8& image);
ImageU8 from_chw_float(const float* data, int channels, int height, int width);

// Bilinear resize of a CHW float image (half-pixel-center sampling).
std::vector<float> resize_bilinear_chw(const float* src, int channels, int height, int width,
                                       int out_height, int out_width);

}  // namespace fsmt
