#include "fsmt/toygen.hpp"

#include <cmath>
#include <cstdio>

#include "fsmt/augment.hpp"
#include "fsmt/errors.hpp"
#include "fsmt/image_io.hpp"
#include "fsmt/rng.hpp"

namespace fsmt {

void ToyCorpusSpec::validate() const {
  if (num_classes < 1 || per_class < 1) throw ConfigError("gen-toy: counts must be >= 1");
  if (image_size < 16) throw ConfigError("gen-toy: image_size must be >= 16");
  if (train_classes + val_classes + test_classes != num_classes)
    throw ConfigError("gen-toy: split sizes " + std::to_string(train_classes) + "+" +
                      std::to_string(val_classes) + "+" + std::to_string(test_classes) +
                      " must sum to num_classes " + std::to_string(num_classes));
  if (style != "patterns" && style != "noise")
    throw ConfigError("gen-toy: style must be 'patterns' or 'noise'");
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  Rgb c{};
  aug_detail::hsv_to_rgb(h, s, v, c.r, c.g, c.b);
  return c;
}

double fract(double x) { return x - std::floor(x); }

// Pattern families are flip-symmetric so horizontal flips during training
// never swap two classes.
enum Family { kSolid = 0, kHStripes, kVStripes, kChecker, kDisk, kRing, kCross, kDots };
constexpr int kNumFamilies = 8;

bool in_pattern(Family fam, int i, int j, int size, double phase_a, double phase_b) {
  const double ci = size / 2.0 - 0.5 + (phase_a - 0.5) * size * 0.15;
  const double cj = size / 2.0 - 0.5 + (phase_b - 0.5) * size * 0.15;
  const int cell = std::max(2, size / 8);
  switch (fam) {
    case kSolid:
      return true;
    case kHStripes:
      return ((i + static_cast<int>(phase_a * cell * 2)) / cell) % 2 == 0;
    case kVStripes:
      return ((j + static_cast<int>(phase_a * cell * 2)) / cell) % 2 == 0;
    case kChecker: {
      const int a = (i + static_cast<int>(phase_a * cell * 2)) / cell;
      const int b = (j + static_cast<int>(phase_b * cell * 2)) / cell;
      return (a + b) % 2 == 0;
    }
    case kDisk: {
      const double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
      const double r = size * 0.32;
      return d2 <= r * r;
    }
    case kRing: {
      const double d = std::sqrt((i - ci) * (i - ci) + (j - cj) * (j - cj));
      return d >= size * 0.20 && d <= size * 0.36;
    }
    case kCross: {
      const int bar = std::max(2, size / 6);
      return std::abs(i - ci) <= bar / 2.0 || std::abs(j - cj) <= bar / 2.0;
    }
    case kDots: {
      const int spacing = std::max(4, size / 4);
      const double rad = std::max(1.5, size / 12.0);
      const double ii = std::fmod(i + phase_a * spacing, spacing) - spacing / 2.0;
      const double jj = std::fmod(j + phase_b * spacing, spacing) - spacing / 2.0;
      return ii * ii + jj * jj <= rad * rad;
    }
  }
  return false;
}

ImageU8 render_pattern_image(int class_id, int size, SplitRng& rng) {
  const double base_hue = fract(0.1 + class_id * 0.618033988749895);
  const Family fam = static_cast<Family>(class_id % kNumFamilies);

  const double hue = fract(base_hue + rng.uniform(-0.03, 0.03));
  const double fg_v = 0.95 * rng.uniform(0.9, 1.1);
  const double bg_v = 0.32 * rng.uniform(0.9, 1.1);
  const Rgb fg = hsv(hue, 0.85, std::min(1.0, fg_v));
  const Rgb bg = hsv(fract(hue + 0.5), 0.35, std::min(1.0, bg_v));
  const double phase_a = rng.uniform();
  const double phase_b = rng.uniform();

  std::vector<float> chw(static_cast<std::size_t>(3) * size * size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const Rgb& c = in_pattern(fam, i, j, size, phase_a, phase_b) ? fg : bg;
      const double noise = rng.uniform(-0.03, 0.03);
      const double px[3] = {c.r + noise, c.g + noise, c.b + noise};
      for (int ch = 0; ch < 3; ++ch)
        chw[static_cast<std::size_t>((ch * size + i) * size + j)] =
            static_cast<float>(std::min(1.0, std::max(0.0, px[ch])));
    }
  return from_chw_float(chw.data(), 3, size, size);
}

ImageU8 render_noise_image(int size, SplitRng& rng) {
  std::vector<float> chw(static_cast<std::size_t>(3) * size * size);
  for (auto& v : chw) v = static_cast<float>(rng.uniform());
  return from_chw_float(chw.data(), 3, size, size);
}

}  // namespace

DatasetManifest generate_toy_corpus(const ToyCorpusSpec& spec,
                                    const std::filesystem::path& out_dir) {
  spec.validate();
  SplitRng root(spec.seed);

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.format = "image_folder";
  manifest.image_size = spec.image_size;
  manifest.channels = 3;

  auto split_of = [&](int cls) {
    if (cls < spec.train_classes) return "train";
    if (cls < spec.train_classes + spec.val_classes) return "val";
    return "test";
  };

  char name[64];
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    std::snprintf(name, sizeof(name), "class_%02d", cls);
    const std::string split = split_of(cls);
    manifest.splits[split].push_back(name);
    const auto dir = out_dir / split / name;
    std::filesystem::create_directories(dir);
    for (int i = 0; i < spec.per_class; ++i) {
      SplitRng rng = root.fork(rng_stream::kToyGen, static_cast<std::uint64_t>(cls),
                               static_cast<std::uint64_t>(i));
      ImageU8 img = spec.style == "noise" ? render_noise_image(spec.image_size, rng)
                                          : render_pattern_image(cls, spec.image_size, rng);
      std::snprintf(name, sizeof(name), "img_%04d.png", i);
      write_png(dir / name, img);
      std::snprintf(name, sizeof(name), "class_%02d", cls);
    }
  }
  manifest.save(out_dir / "manifest.json");
  manifest.validate();
  return manifest;
}

}  // namespace fsmt
