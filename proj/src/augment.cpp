#include "fsmt/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fsmt/image_io.hpp"

namespace fsmt {

AugKind aug_kind_from_string(const std::string& s) {
  if (s == "default") return AugKind::kDefault;
  if (s == "hard") return AugKind::kHard;
  if (s == "none") return AugKind::kNone;
  throw ConfigError("unknown augmentation kind '" + s + "' (default|hard|none)");
}

const char* aug_kind_name(AugKind k) {
  switch (k) {
    case AugKind::kDefault: return "default";
    case AugKind::kHard: return "hard";
    case AugKind::kNone: return "none";
  }
  return "?";
}

AugmentSpec AugmentSpec::defaults(std::int64_t crop_size, std::int64_t crop_padding) {
  AugmentSpec s;
  s.kind = AugKind::kDefault;
  s.crop_size = crop_size;
  s.crop_padding = crop_padding;
  s.jitter = {0.4, 0.4, 0.4, 0.0, 1.0};
  s.hflip_p = 0.5;
  return s;
}

AugmentSpec AugmentSpec::hard(std::int64_t crop_size) {
  AugmentSpec s;
  s.kind = AugKind::kHard;
  s.crop_size = crop_size;
  s.jitter = {0.4, 0.4, 0.4, 0.1, 0.8};
  s.grayscale_p = 0.2;
  s.hflip_p = 0.5;
  s.blur = {3, 1.5, 0.1};
  s.resized_crop = {0.35, 1.0, 1.0};
  return s;
}

AugmentSpec AugmentSpec::none(std::int64_t size) {
  AugmentSpec s;
  s.kind = AugKind::kNone;
  s.crop_size = size;
  return s;
}

void AugmentSpec::validate() const {
  auto prob = [](double p, const char* what) {
    if (p < 0.0 || p > 1.0)
      throw ConfigError(std::string("augment: ") + what + " probability " + std::to_string(p) +
                        " outside [0,1]");
  };
  prob(jitter.p, "jitter");
  prob(grayscale_p, "grayscale");
  prob(hflip_p, "hflip");
  prob(blur.p, "blur");
  prob(resized_crop.p, "resized_crop");
  if (resized_crop.scale_min > resized_crop.scale_max)
    throw ConfigError("augment: resized_crop scale_min > scale_max");
  if (crop_size < 1) throw ConfigError("augment: crop_size must be >= 1");
}

std::string AugTrace::to_json_line() const {
  std::ostringstream os;
  os << "{\"ops\":[";
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const auto& op = ops[i];
    os << (i ? "," : "") << "{\"op\":\"" << op.op << "\",\"applied\":"
       << (op.applied ? "true" : "false");
    for (const auto& [k, v] : op.params) os << ",\"" << k << "\":" << v;
    os << "}";
  }
  os << "]}";
  return os.str();
}

int sample_rotation(SplitRng& rng) { return static_cast<int>(rng.uniform_int(4)); }

namespace aug_detail {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0 + (b - r) / d;
  else
    h = 4.0 + (r - g) / d;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h -= std::floor(h);  // wrap into [0,1)
  const double hh = h * 6.0;
  const int sector = std::min(5, static_cast<int>(hh));
  const double f = hh - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace aug_detail

namespace {

using aug_detail::kLumaB;
using aug_detail::kLumaG;
using aug_detail::kLumaR;

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

struct Image {
  std::int64_t c, h, w;
  std::vector<float> px;  // [C,H,W]
  float& at(std::int64_t ch, std::int64_t i, std::int64_t j) {
    return px[static_cast<std::size_t>((ch * h + i) * w + j)];
  }
  float at(std::int64_t ch, std::int64_t i, std::int64_t j) const {
    return px[static_cast<std::size_t>((ch * h + i) * w + j)];
  }
};

Image from_tensor(const Tensor& t) {
  return Image{t.dim(0), t.dim(1), t.dim(2), t.data()};
}

// Zero-pad then take a random crop_size x crop_size window.
void random_crop_padded(Image& img, std::int64_t size, std::int64_t pad, SplitRng& rng,
                        AugTrace* trace) {
  const std::int64_t ph = img.h + 2 * pad, pw = img.w + 2 * pad;
  if (ph < size || pw < size)
    throw Error("augment: padded image " + std::to_string(ph) + "x" + std::to_string(pw) +
                " smaller than crop " + std::to_string(size));
  const std::int64_t top = static_cast<std::int64_t>(rng.uniform_int(ph - size + 1));
  const std::int64_t left = static_cast<std::int64_t>(rng.uniform_int(pw - size + 1));
  Image out{img.c, size, size, std::vector<float>(static_cast<std::size_t>(img.c * size * size))};
  for (std::int64_t c = 0; c < img.c; ++c)
    for (std::int64_t i = 0; i < size; ++i)
      for (std::int64_t j = 0; j < size; ++j) {
        const std::int64_t si = top + i - pad, sj = left + j - pad;
        out.at(c, i, j) = (si >= 0 && si < img.h && sj >= 0 && sj < img.w) ? img.at(c, si, sj)
                                                                           : 0.0f;
      }
  if (trace)
    trace->ops.push_back({"random_crop", true,
                          {{"top", double(top)}, {"left", double(left)}}});
  img = std::move(out);
}

void hflip(Image& img) {
  for (std::int64_t c = 0; c < img.c; ++c)
    for (std::int64_t i = 0; i < img.h; ++i)
      for (std::int64_t j = 0; j < img.w / 2; ++j)
        std::swap(img.at(c, i, j), img.at(c, i, img.w - 1 - j));
}

double luma_mean(const Image& img) {
  double s = 0.0;
  for (std::int64_t i = 0; i < img.h; ++i)
    for (std::int64_t j = 0; j < img.w; ++j)
      s += kLumaR * img.at(0, i, j) + kLumaG * img.at(1, i, j) + kLumaB * img.at(2, i, j);
  return s / static_cast<double>(img.h * img.w);
}

// Multiplicative brightness/contrast/saturation factors in [1-s, 1+s], hue
// as an additive HSV shift in [-h, +h] turns; applied in that fixed order.
void color_jitter(Image& img, const JitterSpec& spec, SplitRng& rng, AugTrace* trace) {
  const bool applied = rng.bernoulli(spec.p);
  double fb = 1.0, fc = 1.0, fs = 1.0, dh = 0.0;
  if (applied) {
    fb = rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness);
    fc = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast);
    fs = rng.uniform(1.0 - spec.saturation, 1.0 + spec.saturation);
    dh = rng.uniform(-spec.hue, spec.hue);

    for (auto& v : img.px) v = clamp01(v * fb);
    const double m = luma_mean(img);
    for (auto& v : img.px) v = clamp01(m + (v - m) * fc);
    for (std::int64_t i = 0; i < img.h; ++i)
      for (std::int64_t j = 0; j < img.w; ++j) {
        const double l = kLumaR * img.at(0, i, j) + kLumaG * img.at(1, i, j) +
                         kLumaB * img.at(2, i, j);
        for (std::int64_t c = 0; c < 3; ++c)
          img.at(c, i, j) = clamp01(l + (img.at(c, i, j) - l) * fs);
      }
    if (dh != 0.0) {
      for (std::int64_t i = 0; i < img.h; ++i)
        for (std::int64_t j = 0; j < img.w; ++j) {
          double h, s, v, r, g, b;
          aug_detail::rgb_to_hsv(img.at(0, i, j), img.at(1, i, j), img.at(2, i, j), h, s, v);
          aug_detail::hsv_to_rgb(h + dh, s, v, r, g, b);
          img.at(0, i, j) = clamp01(r);
          img.at(1, i, j) = clamp01(g);
          img.at(2, i, j) = clamp01(b);
        }
    }
  }
  if (trace)
    trace->ops.push_back({"color_jitter", applied,
                          {{"brightness", fb},
                           {"contrast", fc},
                           {"saturation", fs},
                           {"hue_shift", dh},
                           {"hue_changed", applied && dh != 0.0 ? 1.0 : 0.0}}});
}

void grayscale(Image& img) {
  for (std::int64_t i = 0; i < img.h; ++i)
    for (std::int64_t j = 0; j < img.w; ++j) {
      const float l = static_cast<float>(kLumaR * img.at(0, i, j) + kLumaG * img.at(1, i, j) +
                                         kLumaB * img.at(2, i, j));
      img.at(0, i, j) = l;
      img.at(1, i, j) = l;
      img.at(2, i, j) = l;
    }
}

// Fixed 3x3 Gaussian, reflect padding.
void gaussian_blur3(Image& img, double sigma) {
  double k[3];
  k[0] = std::exp(-1.0 / (2.0 * sigma * sigma));
  k[1] = 1.0;
  k[2] = k[0];
  const double norm = k[0] + k[1] + k[2];
  for (double& v : k) v /= norm;
  auto reflect = [](std::int64_t i, std::int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  Image tmp = img;
  for (std::int64_t c = 0; c < img.c; ++c)
    for (std::int64_t i = 0; i < img.h; ++i)
      for (std::int64_t j = 0; j < img.w; ++j) {
        double s = 0.0;
        for (int d = -1; d <= 1; ++d) s += k[d + 1] * img.at(c, i, reflect(j + d, img.w));
        tmp.at(c, i, j) = static_cast<float>(s);
      }
  for (std::int64_t c = 0; c < img.c; ++c)
    for (std::int64_t i = 0; i < img.h; ++i)
      for (std::int64_t j = 0; j < img.w; ++j) {
        double s = 0.0;
        for (int d = -1; d <= 1; ++d) s += k[d + 1] * tmp.at(c, reflect(i + d, img.h), j);
        img.at(c, i, j) = clamp01(s);
      }
}

Image resize_bilinear(const Image& img, std::int64_t oh, std::int64_t ow) {
  return Image{img.c, oh, ow,
               resize_bilinear_chw(img.px.data(), static_cast<int>(img.c),
                                   static_cast<int>(img.h), static_cast<int>(img.w),
                                   static_cast<int>(oh), static_cast<int>(ow))};
}

// Area scale uniform in [scale_min, scale_max], aspect uniform in [3/4, 4/3],
// ten attempts then a center-crop fallback; bilinear resize to the target.
void random_resized_crop(Image& img, std::int64_t size, const ResizedCropSpec& spec,
                         SplitRng& rng, AugTrace* trace) {
  const std::int64_t H = img.h, W = img.w;
  const double area = static_cast<double>(H * W);
  std::int64_t ch = -1, cw = -1, top = 0, left = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(spec.scale_min, spec.scale_max);
    const double ar = rng.uniform(3.0 / 4.0, 4.0 / 3.0);
    const std::int64_t h = static_cast<std::int64_t>(std::lround(std::sqrt(target / ar)));
    const std::int64_t w = static_cast<std::int64_t>(std::lround(std::sqrt(target * ar)));
    if (h >= 1 && w >= 1 && h <= H && w <= W) {
      ch = h;
      cw = w;
      top = static_cast<std::int64_t>(rng.uniform_int(H - h + 1));
      left = static_cast<std::int64_t>(rng.uniform_int(W - w + 1));
      break;
    }
  }
  if (ch < 0) {  // center-crop fallback
    ch = cw = std::min(H, W);
    top = (H - ch) / 2;
    left = (W - cw) / 2;
  }
  Image crop{img.c, ch, cw, std::vector<float>(static_cast<std::size_t>(img.c * ch * cw))};
  for (std::int64_t c = 0; c < img.c; ++c)
    for (std::int64_t i = 0; i < ch; ++i)
      for (std::int64_t j = 0; j < cw; ++j) crop.at(c, i, j) = img.at(c, top + i, left + j);
  img = resize_bilinear(crop, size, size);
  if (trace)
    trace->ops.push_back({"random_resized_crop", true,
                          {{"h", double(ch)}, {"w", double(cw)}, {"top", double(top)},
                           {"left", double(left)}}});
}

}  // namespace

Tensor apply_pipeline(const AugmentSpec& spec, const Tensor& image, SplitRng& rng,
                      AugTrace* trace) {
  spec.validate();
  if (image.rank() != 3)
    throw ShapeError("apply_pipeline: expected [C,H,W], got " + shape_str(image.shape()));
  if (spec.kind == AugKind::kNone) return Tensor(image.shape(), image.data());
  if (image.dim(0) != 3)
    throw ShapeError("apply_pipeline: color pipelines need 3 channels, got " +
                     std::to_string(image.dim(0)));

  Image img = from_tensor(image);
  if (spec.kind == AugKind::kDefault) {
    random_crop_padded(img, spec.crop_size, spec.crop_padding, rng, trace);
    color_jitter(img, spec.jitter, rng, trace);
    const bool flip = rng.bernoulli(spec.hflip_p);
    if (flip) hflip(img);
    if (trace) trace->ops.push_back({"hflip", flip, {}});
  } else {  // hard
    if (img.h < spec.crop_size || img.w < spec.crop_size)
      throw Error("augment: image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                  " smaller than crop " + std::to_string(spec.crop_size));
    color_jitter(img, spec.jitter, rng, trace);
    const bool gray = rng.bernoulli(spec.grayscale_p);
    if (gray) grayscale(img);
    if (trace) trace->ops.push_back({"grayscale", gray, {}});
    const bool flip = rng.bernoulli(spec.hflip_p);
    if (flip) hflip(img);
    if (trace) trace->ops.push_back({"hflip", flip, {}});
    const bool blur = rng.bernoulli(spec.blur.p);
    if (blur) gaussian_blur3(img, spec.blur.sigma);
    if (trace) trace->ops.push_back({"gaussian_blur", blur, {{"sigma", spec.blur.sigma}}});
    if (rng.bernoulli(spec.resized_crop.p)) {
      random_resized_crop(img, spec.crop_size, spec.resized_crop, rng, trace);
    } else {
      if (trace) trace->ops.push_back({"random_resized_crop", false, {}});
      if (img.h != spec.crop_size || img.w != spec.crop_size)
        img = resize_bilinear(img, spec.crop_size, spec.crop_size);
    }
  }
  for (auto& v : img.px) v = clamp01(v);
  return Tensor({img.c, img.h, img.w}, std::move(img.px));
}

}  // namespace fsmt
