#include <cmath>

#include "doctest.h"
#include "fsmt/nn.hpp"
#include "support/gradcheck.hpp"

using namespace fsmt;
using fsmt::testing::check_gradients;
using fsmt::testing::random_tensor;

namespace {

EncoderConfig desk_config() {
  EncoderConfig cfg;
  cfg.input_channels = 3;
  cfg.input_size = 32;
  cfg.stage_widths = {32, 64, 128, 256};
  cfg.embedding_dim = 256;
  return cfg;
}

Tensor random_batch(std::int64_t b, std::int64_t c, std::int64_t s, std::uint64_t seed) {
  SplitRng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(b * c * s * s));
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor({b, c, s, s}, std::move(v));
}

}  // namespace

TEST_SUITE_BEGIN("nn");

TEST_CASE("encoder shape contract on the desk config") {
  Encoder enc(desk_config(), SplitRng(1));
  Tensor out = enc.forward(random_batch(2, 3, 32, 5), Mode::kEval);
  CHECK(out.shape() == Shape{2, 256});
}

TEST_CASE("encoder eval mode is deterministic and batch independent") {
  EncoderConfig cfg;
  cfg.stage_widths = {8, 16};
  cfg.embedding_dim = 16;
  cfg.input_size = 16;
  Encoder enc(cfg, SplitRng(2));

  // Four copies of one image embed to four identical rows.
  Tensor one = random_batch(1, 3, 16, 7);
  std::vector<float> four;
  for (int i = 0; i < 4; ++i) four.insert(four.end(), one.data().begin(), one.data().end());
  Tensor out = enc.forward(Tensor({4, 3, 16, 16}, four), Mode::kEval);
  for (int r = 1; r < 4; ++r)
    for (int d = 0; d < 16; ++d)
      CHECK(out.data()[static_cast<std::size_t>(r * 16 + d)] ==
            out.data()[static_cast<std::size_t>(d)]);

  // Repeated calls are invariant.
  Tensor again = enc.forward(Tensor({4, 3, 16, 16}, four), Mode::kEval);
  CHECK(out.data() == again.data());
}

TEST_CASE("permuting the batch permutes embeddings identically (eval)") {
  EncoderConfig cfg;
  cfg.stage_widths = {8, 8};
  cfg.embedding_dim = 8;
  cfg.input_size = 16;
  Encoder enc(cfg, SplitRng(3));
  Tensor batch = random_batch(3, 3, 16, 11);
  Tensor fwd = enc.forward(batch, Mode::kEval);

  // Reverse the batch.
  const std::int64_t chw = 3 * 16 * 16;
  std::vector<float> rev;
  for (int b = 2; b >= 0; --b)
    rev.insert(rev.end(), batch.data().begin() + b * chw, batch.data().begin() + (b + 1) * chw);
  Tensor bwd = enc.forward(Tensor({3, 3, 16, 16}, rev), Mode::kEval);
  for (int b = 0; b < 3; ++b)
    for (int d = 0; d < 8; ++d)
      CHECK(fwd.data()[static_cast<std::size_t>(b * 8 + d)] ==
            bwd.data()[static_cast<std::size_t>((2 - b) * 8 + d)]);
}

TEST_CASE("residual block with zero second conv is relu(x) plus pooling") {
  EncoderConfig cfg;
  cfg.input_channels = 3;
  cfg.input_size = 16;
  cfg.stage_widths = {3};  // same width as input: identity shortcut
  cfg.embedding_dim = 3;
  cfg.block_kind = BlockKind::kResidual;
  EncoderT<float> enc(cfg, SplitRng(4));

  std::vector<ParamRef<float>> refs;
  enc.collect("encoder", refs);
  for (auto& r : refs)
    if (r.name == "encoder.stage1.conv2.weight" || r.name == "encoder.stage1.conv2.bias")
      std::fill(r.tensor->data().begin(), r.tensor->data().end(), 0.0f);

  Tensor x = random_batch(2, 3, 16, 13);
  Tensor got = enc.forward(x, Mode::kEval);

  // Expected: global-average-pool(max-pool(relu(x))).
  Tensor expect = ops::relu(x);
  expect = ops::max_pool2d(expect, 2, 2);
  expect = ops::avg_pool2d(expect, expect.dim(2), 1);
  expect = ops::reshape(expect, {2, 3});
  for (std::size_t i = 0; i < got.data().size(); ++i)
    CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-6));
}

TEST_CASE("parameter count is a pure function of the config") {
  // Hand-computed goldens for (3 channels, widths [4,8]).
  EncoderConfig plain;
  plain.input_channels = 3;
  plain.input_size = 16;
  plain.stage_widths = {4, 8};
  plain.embedding_dim = 8;
  // stage1: 3*4*9 + 4 + 2*4 = 120; stage2: 4*8*9 + 8 + 2*8 = 312.
  CHECK(plain.parameter_count() == 432);

  EncoderConfig res = plain;
  res.block_kind = BlockKind::kResidual;
  // stage1: 120 + (4*4*9 + 4 + 8) + (3*4 + 4 + 8) = 300
  // stage2: 312 + (8*8*9 + 8 + 16) + (4*8 + 8 + 16) = 968
  CHECK(res.parameter_count() == 1268);

  for (const auto& cfg : {plain, res}) {
    EncoderT<float> enc(cfg, SplitRng(5));
    std::vector<ParamRef<float>> refs;
    enc.collect("e", refs);
    std::int64_t total = 0;
    for (auto& r : refs)
      if (r.trainable) total += r.tensor->numel();
    CHECK(total == cfg.parameter_count());
  }
}

TEST_CASE("single linear layer with identity weights is the identity") {
  MlpT<float> mlp({{3, 3, false, false}}, SplitRng(6));
  std::vector<ParamRef<float>> refs;
  mlp.collect("m", refs);
  for (auto& r : refs) {
    if (r.name == "m.layer1.weight") {
      std::fill(r.tensor->data().begin(), r.tensor->data().end(), 0.0f);
      for (int i = 0; i < 3; ++i) r.tensor->data()[static_cast<std::size_t>(i * 3 + i)] = 1.0f;
    }
    if (r.name == "m.layer1.bias")
      std::fill(r.tensor->data().begin(), r.tensor->data().end(), 0.0f);
  }
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(mlp.forward(x, Mode::kEval).data() == x.data());
}

TEST_CASE("projector-shaped mlp obeys the shape contract") {
  MlpConfig cfg{{{256, 512}, {512, 64}}, true};
  MlpT<float> mlp(cfg.layers(), SplitRng(7));
  SplitRng rng(8);
  std::vector<float> v(3 * 256);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  CHECK(mlp.forward(Tensor({3, 256}, v), Mode::kTrain).shape() == Shape{3, 64});
}

TEST_CASE("mlp config validation") {
  CHECK_THROWS_AS(MlpConfig({{4, 8}, {9, 2}}, true).validate(), ConfigError);
  CHECK_THROWS_AS(MlpConfig({}, true).validate(), ConfigError);
  CHECK(rotation_head_layers(32).size() == 3);
  CHECK(rotation_head_layers(32).back().out == 4);
}

TEST_CASE("mlp gradients match finite differences") {
  MlpT<double> mlp(MlpConfig{{{4, 6}, {6, 3}}, true}.layers(), SplitRng(9));
  std::vector<ParamRef<double>> refs;
  mlp.collect("m", refs);
  SplitRng rng(10);
  DoubleTensor x = random_tensor({5, 4}, rng);

  std::vector<DoubleTensor> params;
  for (auto& r : refs)
    if (r.trainable) params.push_back(*r.tensor);
  auto result = check_gradients(params, [&] {
    auto y = mlp.forward(x, Mode::kTrain);
    return ops::mean(ops::mul(y, y));
  });
  CHECK_MESSAGE(result.max_error <= 1e-3, result.worst);
}

TEST_CASE("encoder config validation catches bad configs") {
  EncoderConfig bad = desk_config();
  bad.embedding_dim = 128;  // != last stage width
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = desk_config();
  bad.stage_widths.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = desk_config();
  bad.input_size = 8;  // too small for 4 pooling stages
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  Encoder enc(desk_config(), SplitRng(11));
  CHECK_THROWS_AS(enc.forward(random_batch(1, 3, 16, 1), Mode::kEval), ShapeError);
}

TEST_SUITE_END();
