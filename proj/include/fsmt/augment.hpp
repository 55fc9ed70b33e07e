#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsmt/rng.hpp"
#include "fsmt/tensor.hpp"

namespace fsmt {

enum class AugKind { kDefault, kHard, kNone };

AugKind aug_kind_from_string(const std::string& s);
const char* aug_kind_name(AugKind k);

struct JitterSpec {
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
  double hue = 0.0;  // additive HSV shift in turns, sampled from [-hue, +hue]
  double p = 0.0;
};

struct BlurSpec {
  std::int64_t kernel = 3;
  double sigma = 1.5;
  double p = 0.0;
};

struct ResizedCropSpec {
  double scale_min = 1.0;
  double scale_max = 1.0;
  double p = 0.0;
};

// One augmentation pipeline. `kind` pins the op order:
//   default: pad+crop -> jitter -> hflip
//   hard:    jitter -> grayscale -> hflip -> blur -> resized crop
//   none:    identity
struct AugmentSpec {
  AugKind kind = AugKind::kNone;
  std::int64_t crop_size = 32;
  std::int64_t crop_padding = 0;
  JitterSpec jitter;
  double grayscale_p = 0.0;
  double hflip_p = 0.0;
  BlurSpec blur;
  ResizedCropSpec resized_crop;

  static AugmentSpec defaults(std::int64_t crop_size, std::int64_t crop_padding);
  static AugmentSpec hard(std::int64_t crop_size);
  static AugmentSpec none(std::int64_t size);

  void validate() const;
};

// Per-image record of the transform decisions a pipeline sampled, for the
// trace mode. Serializes to one JSON line.
struct AugOpTrace {
  std::string op;
  bool applied = false;
  std::vector<std::pair<std::string, double>> params;
};

struct AugTrace {
  std::vector<AugOpTrace> ops;
  std::string to_json_line() const;
};

// Applies `spec` to a [C,H,W] image with values in [0,1]. Identical
// (spec, image, rng state) triples produce bit-identical outputs; the output
// is clamped to [0,1] and has spatial size crop_size (kind=none keeps the
// input size).
Tensor apply_pipeline(const AugmentSpec& spec, const Tensor& image, SplitRng& rng,
                      AugTrace* trace = nullptr);

// Lossless 90-degree-step rotation of a [C,H,W] array. Label l rotates by
// l*90 degrees counter-clockwise on screen (row 0 at the top): under label 1
// the pixel at (0,0) moves to (0, H-1).
template <typename T>
TensorT<T> rotate90(const TensorT<T>& image, int label) {
  if (image.rank() != 3)
    throw ShapeError("rotate90: expected [C,H,W], got " + shape_str(image.shape()));
  if (label < 0 || label > 3)
    throw Error("rotate90: label " + std::to_string(label) + " not in {0,1,2,3}");
  const std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (label == 0) return TensorT<T>(image.shape(), image.data());
  const auto& in = image.data();
  if (label == 2) {
    std::vector<T> out(in.size());
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
          out[static_cast<std::size_t>((c * H + i) * W + j)] =
              in[static_cast<std::size_t>((c * H + (H - 1 - i)) * W + (W - 1 - j))];
    return TensorT<T>({C, H, W}, std::move(out));
  }
  // Labels 1 and 3 swap the spatial dims.
  std::vector<T> out(in.size());
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < W; ++i)
      for (std::int64_t j = 0; j < H; ++j) {
        const std::int64_t si = (label == 1) ? H - 1 - j : j;
        const std::int64_t sj = (label == 1) ? i : W - 1 - i;
        out[static_cast<std::size_t>((c * W + i) * H + j)] =
            in[static_cast<std::size_t>((c * H + si) * W + sj)];
      }
  return TensorT<T>({C, W, H}, std::move(out));
}

// Batched rotate90 for a [B,C,H,W] tensor of square images, one label per item.
template <typename T>
TensorT<T> rotate90_batch(const TensorT<T>& batch, const std::vector<int>& labels) {
  if (batch.rank() != 4)
    throw ShapeError("rotate90: expected [B,C,H,W], got " + shape_str(batch.shape()));
  if (batch.dim(2) != batch.dim(3))
    throw ShapeError("rotate90: batched rotation needs square images, got " +
                     shape_str(batch.shape()));
  const std::int64_t B = batch.dim(0), chw = batch.numel() / batch.dim(0);
  std::vector<T> out(batch.data().size());
  for (std::int64_t b = 0; b < B; ++b) {
    TensorT<T> img({batch.dim(1), batch.dim(2), batch.dim(3)},
                   std::vector<T>(batch.data().begin() + b * chw,
                                  batch.data().begin() + (b + 1) * chw));
    TensorT<T> rot = rotate90(img, labels[static_cast<std::size_t>(b)]);
    std::copy(rot.data().begin(), rot.data().end(), out.begin() + b * chw);
  }
  return TensorT<T>(batch.shape(), std::move(out));
}

// Uniform draw over the four rotation labels.
int sample_rotation(SplitRng& rng);

namespace aug_detail {
// Pinned luma weights, shared by grayscale/saturation/contrast.
inline constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);
}  // namespace aug_detail

}  // namespace fsmt
