#include <cmath>
#include <array>

#include "doctest.h"
#include "fsmt/augment.hpp"
#include "json.hpp"

using namespace fsmt;

namespace {

Tensor random_image(std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  SplitRng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(c * h * w));
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor({c, h, w}, std::move(v));
}

}  // namespace

TEST_SUITE_BEGIN("augment");

TEST_CASE("kind=none is the identity pipeline") {
  Tensor img = random_image(3, 8, 8, 1);
  SplitRng rng(2);
  Tensor out = apply_pipeline(AugmentSpec::none(8), img, rng);
  CHECK(out.data() == img.data());
  CHECK(out.shape() == img.shape());
}

TEST_CASE("forced hflip applied twice restores the image") {
  AugmentSpec spec = AugmentSpec::defaults(8, 0);
  spec.jitter.p = 0.0;
  spec.hflip_p = 1.0;
  Tensor img = random_image(3, 8, 8, 3);
  SplitRng r1(4), r2(5);
  Tensor once = apply_pipeline(spec, img, r1);
  Tensor twice = apply_pipeline(spec, once, r2);
  CHECK(twice.data() == img.data());
}

TEST_CASE("grayscale maps pure red to the luma value everywhere") {
  AugmentSpec spec = AugmentSpec::hard(4);
  spec.jitter.p = 0.0;
  spec.grayscale_p = 1.0;
  spec.hflip_p = 0.0;
  spec.blur.p = 0.0;
  spec.resized_crop.p = 0.0;
  std::vector<float> v(3 * 4 * 4, 0.0f);
  std::fill(v.begin(), v.begin() + 16, 1.0f);  // R channel = 1
  SplitRng rng(6);
  Tensor out = apply_pipeline(spec, Tensor({3, 4, 4}, v), rng);
  for (float x : out.data()) CHECK(x == doctest::Approx(0.299f).epsilon(1e-6));
}

TEST_CASE("rotate90 label 0 is the identity") {
  Tensor img = random_image(3, 5, 5, 7);
  CHECK(rotate90(img, 0).data() == img.data());
}

TEST_CASE("rotate90 applied four times with label 1 restores the image") {
  Tensor img = random_image(2, 4, 6, 8);
  Tensor r = img;
  for (int i = 0; i < 4; ++i) r = rotate90(r, 1);
  CHECK(r.shape() == img.shape());
  CHECK(r.data() == img.data());
}

TEST_CASE("rotate90 index mapping oracle on a 2x2 image") {
  // Convention: label 1 sends (row 0, col 0) to (row 0, col H-1).
  Tensor img({1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor r = rotate90(img, 1);
  const std::int64_t H = 2;
  // Independent index oracle: out[j][H-1-i] == in[i][j] for all (i, j).
  for (std::int64_t i = 0; i < 2; ++i)
    for (std::int64_t j = 0; j < 2; ++j)
      CHECK(r.data()[static_cast<std::size_t>(j * 2 + (H - 1 - i))] ==
            img.data()[static_cast<std::size_t>(i * 2 + j)]);
  CHECK(r.data()[0 * 2 + 1] == 1.0f);  // (0,0) -> (0, H-1)
}

TEST_CASE("rotate90 composition table matches mod-4 addition") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Tensor sq = random_image(3, 6, 6, 100 + seed);
    Tensor rect = random_image(2, 4, 6, 200 + seed);
    for (const Tensor& img : {sq, rect})
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          Tensor lhs = rotate90(rotate90(img, a), b);
          Tensor rhs = rotate90(img, (a + b) % 4);
          CHECK(lhs.shape() == rhs.shape());
          CHECK(lhs.data() == rhs.data());
        }
  }
}

TEST_CASE("sample_rotation is uniform, seeded, and in range") {
  SplitRng rng(9);
  std::array<int, 4> counts{0, 0, 0, 0};
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const int l = sample_rotation(rng);
    REQUIRE(l >= 0);
    REQUIRE(l <= 3);
    counts[static_cast<std::size_t>(l)]++;
  }
  for (int c : counts) {
    const double f = static_cast<double>(c) / n;
    CHECK(f >= 0.24);
    CHECK(f <= 0.26);
  }

  SplitRng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(sample_rotation(a) == sample_rotation(b));
}

TEST_CASE("pipelines are bit-deterministic given the rng state") {
  Tensor img = random_image(3, 16, 16, 10);
  for (const AugmentSpec& spec : {AugmentSpec::defaults(16, 4), AugmentSpec::hard(16)}) {
    SplitRng r1(77), r2(77);
    CHECK(apply_pipeline(spec, img, r1).data() == apply_pipeline(spec, img, r2).data());
  }
}

TEST_CASE("augmented output stays in [0,1] and at crop size") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor img = random_image(3, 20, 20, 300 + seed);
    SplitRng rng(seed);
    for (const AugmentSpec& spec : {AugmentSpec::defaults(16, 4), AugmentSpec::hard(16)}) {
      SplitRng r = rng.fork(spec.kind == AugKind::kHard);
      Tensor out = apply_pipeline(spec, img, r);
      CHECK(out.dim(1) == 16);
      CHECK(out.dim(2) == 16);
      for (float v : out.data()) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
      }
    }
  }
}

TEST_CASE("default pipeline never shifts hue; hard shifts with p <= 0.8") {
  Tensor img = random_image(3, 12, 12, 11);
  int hard_hue_changes = 0;
  const int n = 300;
  for (int i = 0; i < n; ++i) {
    SplitRng r1(static_cast<std::uint64_t>(1000 + i));
    AugTrace trace_default;
    apply_pipeline(AugmentSpec::defaults(12, 2), img, r1, &trace_default);
    for (const auto& op : trace_default.ops)
      if (op.op == "color_jitter")
        for (const auto& [k, v] : op.params)
          if (k == "hue_changed") CHECK(v == 0.0);

    SplitRng r2(static_cast<std::uint64_t>(2000 + i));
    AugTrace trace_hard;
    apply_pipeline(AugmentSpec::hard(12), img, r2, &trace_hard);
    for (const auto& op : trace_hard.ops)
      if (op.op == "color_jitter")
        for (const auto& [k, v] : op.params)
          if (k == "hue_changed" && v != 0.0) hard_hue_changes++;
  }
  const double freq = static_cast<double>(hard_hue_changes) / n;
  CHECK(freq <= 0.85);  // gated at p=0.8
  CHECK(freq >= 0.60);
}

TEST_CASE("trace mode emits parseable JSON lines") {
  Tensor img = random_image(3, 12, 12, 12);
  SplitRng rng(13);
  AugTrace trace;
  apply_pipeline(AugmentSpec::hard(12), img, rng, &trace);
  const std::string line = trace.to_json_line();
  const auto j = nlohmann::json::parse(line);
  CHECK(j.contains("ops"));
  CHECK(j["ops"].size() >= 4);
}

TEST_CASE("images smaller than the crop requirements are rejected") {
  Tensor img = random_image(3, 8, 8, 14);
  SplitRng rng(15);
  CHECK_THROWS_AS(apply_pipeline(AugmentSpec::hard(16), img, rng), Error);
  AugmentSpec small = AugmentSpec::defaults(32, 0);
  CHECK_THROWS_AS(apply_pipeline(small, img, rng), Error);
}

TEST_CASE("augment spec validation") {
  AugmentSpec bad = AugmentSpec::hard(16);
  bad.jitter.p = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = AugmentSpec::hard(16);
  bad.resized_crop.scale_min = 0.9;
  bad.resized_crop.scale_max = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_SUITE_END();
