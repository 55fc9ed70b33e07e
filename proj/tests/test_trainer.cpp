#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fsmt/checkpoint.hpp"
#include "fsmt/trainer.hpp"

using namespace fsmt;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model_config(std::int64_t classes) {
  ModelConfig cfg;
  cfg.encoder.input_channels = 3;
  cfg.encoder.input_size = 16;
  cfg.encoder.stage_widths = {8, 16};
  cfg.encoder.embedding_dim = 16;
  cfg.heads.projector_hidden = 16;
  cfg.heads.projector_dim = 8;
  cfg.heads.predictor_hidden = 16;
  cfg.num_classes = classes;
  return cfg;
}

// Tiny in-memory dataset: `classes` solid-color classes, `per_class` images.
LabeledDataset solid_color_dataset(std::int64_t classes, std::int64_t per_class,
                                   std::int64_t size, std::uint64_t seed) {
  LabeledDataset ds;
  ds.split = "train";
  ds.c = 3;
  ds.h = size;
  ds.w = size;
  SplitRng rng(seed);
  for (std::int64_t c = 0; c < classes; ++c) {
    ds.class_names.push_back("class_" + std::to_string(c));
    const float r = static_cast<float>((c * 37 % 91) / 90.0);
    const float g = static_cast<float>((c * 53 % 83) / 82.0);
    const float b = static_cast<float>((c * 71 % 79) / 78.0);
    for (std::int64_t i = 0; i < per_class; ++i) {
      for (std::int64_t p = 0; p < size * size; ++p) {
        const float noise = static_cast<float>(rng.uniform(-0.02, 0.02));
        ds.images.push_back(std::min(1.0f, std::max(0.0f, r + noise)));
      }
      for (std::int64_t p = 0; p < size * size; ++p)
        ds.images.push_back(std::min(1.0f, std::max(0.0f, g)));
      for (std::int64_t p = 0; p < size * size; ++p)
        ds.images.push_back(std::min(1.0f, std::max(0.0f, b)));
      ds.labels.push_back(static_cast<std::int32_t>(c));
      ++ds.n;
    }
  }
  return ds;
}

TrainConfig fast_config(int epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.lr = 0.05;
  cfg.seed = seed;
  cfg.tasks = TaskSet{true, false, false};
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "fsmt_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ParamRef<float> make_param(Tensor& t, bool decay = true) {
  return ParamRef<float>{"p", &t, decay, true};
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("vanilla sgd: one step moves by lr*grad") {
  Tensor p({1}, {1.0f}, true);
  p.ensure_grad()[0] = 1.0f;
  std::vector<ParamRef<float>> params{make_param(p, false)};
  SgdState state;
  state.init(params);
  state.lr = 0.1;
  sgd_step(state, params, /*momentum=*/0.0, /*weight_decay=*/0.0);
  CHECK(p.data()[0] == doctest::Approx(0.9f));
  CHECK(!p.has_grad() || p.grad()[0] == 0.0f);  // grads zeroed after the step
}

TEST_CASE("lr=0 leaves parameters unchanged") {
  Tensor p({2}, {1.0f, -2.0f}, true);
  p.ensure_grad()[0] = 3.0f;
  p.ensure_grad()[1] = -1.0f;
  std::vector<ParamRef<float>> params{make_param(p)};
  SgdState state;
  state.init(params);
  state.lr = 0.0;
  sgd_step(state, params, 0.9, 5e-4);
  CHECK(p.data() == std::vector<float>{1.0f, -2.0f});
}

TEST_CASE("two momentum steps on a constant gradient displace by lr*g*(1+1.9)") {
  // v1 = g, v2 = 0.9g + g = 1.9g; total displacement lr*g*2.9.
  Tensor p({1}, {0.0f}, true);
  std::vector<ParamRef<float>> params{make_param(p, false)};
  SgdState state;
  state.init(params);
  state.lr = 0.1;
  const float g = 2.0f;
  for (int s = 0; s < 2; ++s) {
    p.ensure_grad()[0] = g;
    sgd_step(state, params, 0.9, 0.0);
  }
  CHECK(p.data()[0] == doctest::Approx(-0.1f * g * 2.9f).epsilon(1e-6));
  CHECK(state.step == 2);
}

TEST_CASE("weight decay adds wd*param to the gradient for decayed params only") {
  Tensor w({1}, {2.0f}, true);
  Tensor b({1}, {2.0f}, true);
  w.ensure_grad()[0] = 0.0f;
  b.ensure_grad()[0] = 0.0f;
  std::vector<ParamRef<float>> params{make_param(w, true), make_param(b, false)};
  SgdState state;
  state.init(params);
  state.lr = 1.0;
  sgd_step(state, params, 0.0, 0.1);
  CHECK(w.data()[0] == doctest::Approx(2.0f - 0.1f * 2.0f));
  CHECK(b.data()[0] == 2.0f);
}

TEST_CASE("missing gradient on a trainable parameter is an error") {
  Tensor p({1}, {1.0f}, true);
  std::vector<ParamRef<float>> params{make_param(p)};
  SgdState state;
  state.init(params);
  state.lr = 0.1;
  CHECK_THROWS_WITH_AS(sgd_step(state, params, 0.9, 0.0),
                       doctest::Contains("missing gradient"), Error);
}

TEST_CASE("lr schedule: decay at epoch 2 with factor 0.1") {
  TrainConfig cfg = fast_config(5, 0);
  cfg.decay_epochs = {2};
  cfg.decay_factor = 0.1;
  CHECK(lr_at_epoch(cfg, 0) == cfg.lr);
  CHECK(lr_at_epoch(cfg, 1) == cfg.lr);
  CHECK(lr_at_epoch(cfg, 2) == cfg.lr * 0.1);  // the third epoch runs at 0.1*lr0
  CHECK(lr_at_epoch(cfg, 4) == cfg.lr * 0.1);
}

TEST_CASE("train config validation") {
  TrainConfig cfg = fast_config(5, 0);
  cfg.decay_epochs = {3, 2};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = fast_config(5, 0);
  cfg.decay_epochs = {5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = fast_config(5, 0);
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = fast_config(5, 0);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("merging disjoint tasks unions examples and classes") {
  LabeledDataset a = solid_color_dataset(3, 4, 8, 1);
  LabeledDataset b = solid_color_dataset(3, 4, 8, 2);
  for (auto& n : b.class_names) n += "_b";
  LabeledDataset merged = merge_meta_training({a, b});
  CHECK(merged.num_classes() == 6);
  CHECK(merged.n == a.n + b.n);
}

TEST_CASE("merging a single task is the identity") {
  LabeledDataset a = solid_color_dataset(3, 4, 8, 3);
  LabeledDataset merged = merge_meta_training({a});
  CHECK(merged.images == a.images);
  CHECK(merged.labels == a.labels);
  CHECK(merged.class_names == a.class_names);
}

TEST_CASE("overlapping class names map to the same global index") {
  LabeledDataset a = solid_color_dataset(3, 2, 8, 4);  // class_0..class_2
  LabeledDataset b = solid_color_dataset(2, 2, 8, 5);  // class_0..class_1
  LabeledDataset merged = merge_meta_training({a, b});
  CHECK(merged.num_classes() == 3);
  CHECK(merged.n == 10);
  // b's examples follow a's; the first b example is class_0 -> global 0.
  CHECK(merged.labels[static_cast<std::size_t>(a.n)] == merged.labels[0]);
}

TEST_CASE("merge rejects inconsistent image shapes") {
  LabeledDataset a = solid_color_dataset(2, 2, 8, 6);
  LabeledDataset b = solid_color_dataset(2, 2, 16, 7);
  CHECK_THROWS_AS(merge_meta_training({a, b}), DataError);
}

TEST_CASE("epoch covers ceil(N/B) steps") {
  LabeledDataset data = solid_color_dataset(4, 5, 16, 8);  // N=20
  MultiTaskModel model(tiny_model_config(4), 9);
  TrainConfig cfg = fast_config(1, 9);
  cfg.batch_size = 8;  // ceil(20/8) = 3
  MemoryMetricsSink sink;
  train(cfg, data, model, &sink, temp_dir("steps"), AugmentSpec::defaults(16, 2),
        AugmentSpec::hard(16));
  REQUIRE(sink.records.size() == 1);
  CHECK(sink.records[0].steps == 3);
}

TEST_CASE("weight decay excludes batch-norm scale/shift and biases") {
  MultiTaskModel model(tiny_model_config(4), 10);
  TaskSet all{true, true, true};
  auto decayed = weight_decay_param_names(model, all);
  for (const auto& name : decayed) {
    CHECK(name.find(".weight") != std::string::npos);
    CHECK(name.find(".bias") == std::string::npos);
    CHECK(name.find(".gamma") == std::string::npos);
    CHECK(name.find(".beta") == std::string::npos);
  }
  // The decayed set is exactly the conv/linear weights of the active heads:
  // encoder 2, classifier 1, rotation head 3, projector 2, predictor 2.
  CHECK(decayed.size() == 10);
  CHECK(weight_decay_param_names(model, TaskSet{true, false, false}).size() == 3);
}

TEST_CASE("optimizer owns only the active tasks' parameters") {
  MultiTaskModel model(tiny_model_config(4), 11);
  auto sup_only = optimizer_params(model, TaskSet{true, false, false});
  for (const auto& ref : sup_only) {
    CHECK(ref.name.rfind("rotation_head", 0) != 0);
    CHECK(ref.name.rfind("projector", 0) != 0);
    CHECK(ref.name.rfind("predictor", 0) != 0);
  }
}

TEST_CASE("identical seeds reproduce loss curves and checkpoints bitwise") {
  LabeledDataset data = solid_color_dataset(4, 6, 16, 12);
  TrainConfig cfg = fast_config(2, 1234);
  cfg.tasks = TaskSet{true, false, true};
  cfg.view_policy = ViewPolicy::kSharedViews;

  auto run = [&](const std::string& tag) {
    MultiTaskModel model(tiny_model_config(4), cfg.seed);
    MemoryMetricsSink sink;
    TrainResult res = train(cfg, data, model, &sink, temp_dir(tag), AugmentSpec::defaults(16, 2),
                            AugmentSpec::hard(16));
    std::ifstream ck(res.final_checkpoint, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(ck)), std::istreambuf_iterator<char>());
    return std::pair{sink.records, bytes};
  };
  auto [rec1, ck1] = run("det1");
  auto [rec2, ck2] = run("det2");
  REQUIRE(rec1.size() == rec2.size());
  for (std::size_t i = 0; i < rec1.size(); ++i) {
    CHECK(rec1[i].loss_total == rec2[i].loss_total);
    CHECK(*rec1[i].loss_sup == *rec2[i].loss_sup);
    CHECK(*rec1[i].loss_byol == *rec2[i].loss_byol);
  }
  CHECK(ck1 == ck2);
}

TEST_CASE("supervised training memorizes a 32-sample toy set") {
  LabeledDataset data = solid_color_dataset(4, 8, 16, 13);  // 32 examples
  MultiTaskModel model(tiny_model_config(4), 14);
  TrainConfig cfg = fast_config(200, 14);
  cfg.batch_size = 32;
  cfg.decay_epochs = {150};
  MemoryMetricsSink sink;
  train(cfg, data, model, &sink, temp_dir("memorize"), AugmentSpec::none(16),
        AugmentSpec::hard(16));
  CHECK(sink.records.back().loss_total < 0.01);
}

TEST_CASE("trace mode records view counts per policy") {
  LabeledDataset data = solid_color_dataset(3, 4, 16, 15);
  TrainConfig cfg = fast_config(1, 16);
  cfg.batch_size = 6;
  cfg.tasks = TaskSet{true, false, true};

  cfg.view_policy = ViewPolicy::kSharedViews;
  {
    MultiTaskModel model(tiny_model_config(3), 16);
    TrainerTrace trace;
    train(cfg, data, model, nullptr, temp_dir("trace_shared"), AugmentSpec::defaults(16, 2),
          AugmentSpec::hard(16), &trace);
    for (int v : trace.step_views_per_image) CHECK(v == 2);
  }
  cfg.view_policy = ViewPolicy::kSeparateViews;
  {
    MultiTaskModel model(tiny_model_config(3), 16);
    TrainerTrace trace;
    train(cfg, data, model, nullptr, temp_dir("trace_separate"), AugmentSpec::defaults(16, 2),
          AugmentSpec::hard(16), &trace);
    for (int v : trace.step_views_per_image) CHECK(v == 3);
  }
}

TEST_CASE("non-finite loss aborts with epoch and step diagnostics") {
  LabeledDataset data = solid_color_dataset(3, 4, 16, 17);
  ModelConfig mc = tiny_model_config(3);
  mc.weights.supervised = std::numeric_limits<double>::infinity();
  MultiTaskModel model(mc, 18);
  TrainConfig cfg = fast_config(1, 18);
  cfg.batch_size = 6;
  try {
    train(cfg, data, model, nullptr, temp_dir("nonfinite"), AugmentSpec::defaults(16, 2),
          AugmentSpec::hard(16));
    FAIL("expected NonFiniteLossError");
  } catch (const NonFiniteLossError& e) {
    CHECK(e.epoch == 0);
    CHECK(e.step == 0);
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("one ema update per optimization step iff byol is active") {
  LabeledDataset data = solid_color_dataset(3, 4, 16, 19);
  TrainConfig cfg = fast_config(1, 20);
  cfg.batch_size = 12;  // one step

  // Without byol the target never moves.
  {
    MultiTaskModel model(tiny_model_config(3), 20);
    std::vector<std::vector<float>> before;
    for (auto& r : model.target_refs()) before.push_back(r.tensor->data());
    train(cfg, data, model, nullptr, temp_dir("ema_off"), AugmentSpec::defaults(16, 2),
          AugmentSpec::hard(16));
    auto refs = model.target_refs();
    for (std::size_t i = 0; i < refs.size(); ++i) CHECK(refs[i].tensor->data() == before[i]);
  }
  // With byol active, target = tau*old + (1-tau)*new online after the step.
  {
    cfg.tasks = TaskSet{true, false, true};
    cfg.view_policy = ViewPolicy::kSharedViews;
    MultiTaskModel model(tiny_model_config(3), 20);
    std::vector<std::vector<float>> before;
    for (auto& r : model.target_refs()) before.push_back(r.tensor->data());
    train(cfg, data, model, nullptr, temp_dir("ema_on"), AugmentSpec::defaults(16, 2),
          AugmentSpec::hard(16));
    std::vector<ParamRef<float>> paired;
    for (auto& r : model.online_refs())
      if (r.name.rfind("encoder", 0) == 0 || r.name.rfind("projector", 0) == 0)
        paired.push_back(r);
    auto targets = model.target_refs();
    const float tau = 0.99f;
    for (std::size_t i = 0; i < targets.size(); ++i)
      for (std::size_t j = 0; j < targets[i].tensor->data().size(); ++j)
        CHECK(targets[i].tensor->data()[j] ==
              doctest::Approx(tau * before[i][j] +
                              (1.0f - tau) * paired[i].tensor->data()[j])
                  .epsilon(1e-6));
  }
}

TEST_SUITE_END();
