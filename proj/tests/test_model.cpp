#include <cmath>
#include <cstring>

#include "doctest.h"
#include "fsmt/model.hpp"
#include "support/gradcheck.hpp"

using namespace fsmt;

namespace {

ModelConfig tiny_config(std::int64_t classes = 8, double tau = 0.99) {
  ModelConfig cfg;
  cfg.encoder.input_channels = 3;
  cfg.encoder.input_size = 8;
  cfg.encoder.stage_widths = {4, 8};
  cfg.encoder.embedding_dim = 8;
  cfg.heads.projector_hidden = 8;
  cfg.heads.projector_dim = 4;
  cfg.heads.predictor_hidden = 8;
  cfg.num_classes = classes;
  cfg.tau = tau;
  return cfg;
}

Tensor random_batch(std::int64_t b, std::int64_t s, std::uint64_t seed) {
  SplitRng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(b * 3 * s * s));
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor({b, 3, s, s}, std::move(v));
}

template <typename T>
void zero_params_by_prefix(MultiTaskModelT<T>& model, const std::string& prefix) {
  for (auto& ref : model.online_refs())
    if (ref.name.rfind(prefix, 0) == 0)
      std::fill(ref.tensor->data().begin(), ref.tensor->data().end(), T(0));
}

AugmentPlan test_plan(std::int64_t size) {
  return AugmentPlan{AugmentSpec::defaults(size, 2), AugmentSpec::hard(size), AugKind::kDefault};
}

TrainingBatch make_batch(std::int64_t b, std::int64_t s, std::uint64_t seed,
                         std::int64_t classes) {
  TrainingBatch batch;
  batch.images = random_batch(b, s, seed);
  SplitRng rng(seed + 1);
  for (std::int64_t i = 0; i < b; ++i) {
    batch.labels.push_back(static_cast<std::int32_t>(rng.uniform_int(classes)));
    batch.item_ids.push_back(i);
  }
  batch.rng = SplitRng(seed + 2);
  return batch;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("supervised loss with zeroed classifier is ln(num_classes)") {
  MultiTaskModel model(tiny_config(8), 1);
  zero_params_by_prefix(model, "classifier");
  std::vector<std::int32_t> labels = {0, 3, 7, 2};
  Tensor loss = model.supervised_loss(random_batch(4, 8, 2), labels);
  CHECK(loss.item() == doctest::Approx(std::log(8.0)).epsilon(1e-6));
}

TEST_CASE("large-margin bias drives the supervised loss to zero") {
  MultiTaskModel model(tiny_config(4), 3);
  zero_params_by_prefix(model, "classifier");
  for (auto& ref : model.online_refs())
    if (ref.name == "classifier.bias") ref.tensor->data()[1] = 25.0f;
  std::vector<std::int32_t> labels = {1, 1, 1};
  CHECK(model.supervised_loss(random_batch(3, 8, 4), labels).item() ==
        doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("supervised loss matches an independent log-softmax oracle") {
  MultiTaskModel model(tiny_config(8), 5);
  Tensor images = random_batch(6, 8, 6);
  std::vector<std::int32_t> labels = {0, 1, 2, 3, 4, 5};

  Tensor logits = model.classify(images, Mode::kTrain);
  double oracle = 0.0;
  for (std::int64_t b = 0; b < 6; ++b) {
    const float* row = logits.data().data() + b * 8;
    double mx = row[0];
    for (int c = 1; c < 8; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double se = 0.0;
    for (int c = 0; c < 8; ++c) se += std::exp(row[c] - mx);
    oracle += mx + std::log(se) - row[labels[static_cast<std::size_t>(b)]];
  }
  oracle /= 6.0;

  MultiTaskModel fresh(tiny_config(8), 5);  // same init; batch-norm state untouched
  Tensor loss = fresh.supervised_loss(images, labels);
  CHECK(loss.item() == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("label out of range is rejected") {
  MultiTaskModel model(tiny_config(4), 7);
  std::vector<std::int32_t> labels = {0, 4};
  CHECK_THROWS_AS(model.supervised_loss(random_batch(2, 8, 8), labels), Error);
}

TEST_CASE("rotation loss with a zeroed final layer is ln 4") {
  MultiTaskModel model(tiny_config(), 9);
  for (auto& ref : model.online_refs())
    if (ref.name == "rotation_head.layer3.weight" || ref.name == "rotation_head.layer3.bias")
      std::fill(ref.tensor->data().begin(), ref.tensor->data().end(), 0.0f);
  SplitRng rng(10);
  auto [loss, labels] = model.rotation_loss(random_batch(8, 8, 11), rng);
  CHECK(labels.size() == 8);  // batch size preserved, no 4x copies
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("head hard-wired to label 0 scores the oracle expectation") {
  MultiTaskModel model(tiny_config(), 12);
  for (auto& ref : model.online_refs()) {
    if (ref.name == "rotation_head.layer3.weight")
      std::fill(ref.tensor->data().begin(), ref.tensor->data().end(), 0.0f);
    if (ref.name == "rotation_head.layer3.bias") {
      std::fill(ref.tensor->data().begin(), ref.tensor->data().end(), 0.0f);
      ref.tensor->data()[0] = 20.0f;
    }
  }
  SplitRng rng(13);
  auto [loss, labels] = model.rotation_loss(random_batch(16, 8, 14), rng);

  // Logits are exactly [20,0,0,0] for every sample; expected loss over the
  // recorded sampled labels via a double-precision oracle.
  const double lse = 20.0 + std::log(1.0 + 3.0 * std::exp(-20.0));
  double expect = 0.0;
  for (int l : labels) expect += lse - (l == 0 ? 20.0 : 0.0);
  expect /= static_cast<double>(labels.size());
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-5));
  bool saw_nonzero = false;
  for (int l : labels) saw_nonzero |= (l != 0);
  CHECK(saw_nonzero);
}

TEST_CASE("byol pair losses equal 2 - 2*cosine and stay in [0,4]") {
  SplitRng rng(15);
  const std::int64_t B = 1000, D = 16;
  std::vector<double> pv(B * D), tv(B * D);
  for (auto& v : pv) v = rng.uniform(-1, 1);
  for (auto& v : tv) v = rng.uniform(-1, 1);
  DoubleTensor pred({B, D}, pv), target({B, D}, tv);
  std::vector<double> losses = byol_pair_losses(pred, target);

  for (std::int64_t b = 0; b < B; ++b) {
    double dot = 0, np = 0, nt = 0;
    for (std::int64_t d = 0; d < D; ++d) {
      dot += pv[b * D + d] * tv[b * D + d];
      np += pv[b * D + d] * pv[b * D + d];
      nt += tv[b * D + d] * tv[b * D + d];
    }
    const double cosine = dot / (std::sqrt(np) * std::sqrt(nt));
    CHECK(losses[static_cast<std::size_t>(b)] ==
          doctest::Approx(2.0 - 2.0 * cosine).epsilon(1e-6));
    REQUIRE(losses[static_cast<std::size_t>(b)] >= 0.0);
    REQUIRE(losses[static_cast<std::size_t>(b)] <= 4.0);
  }
}

TEST_CASE("byol degenerate pairs: equal direction gives 0, opposite gives 4") {
  DoubleTensor p({2, 3}, {1, 0, 0, 0, 2, 0});
  DoubleTensor t({2, 3}, {3, 0, 0, 0, -1, 0});
  std::vector<double> losses = byol_pair_losses(p, t);
  CHECK(losses[0] == doctest::Approx(0.0));
  CHECK(losses[1] == doctest::Approx(4.0));
}

TEST_CASE("byol_loss equals the per-pair mean and starves the target of gradients") {
  MultiTaskModel model(tiny_config(), 16);
  Tensor va = random_batch(4, 8, 17);
  Tensor vb = random_batch(4, 8, 18);

  // Recompute the two branches exactly as byol_loss does.
  MultiTaskModel probe(tiny_config(), 16);
  Tensor pred = probe.predictor().forward(
      probe.projector().forward(probe.encode(va, Mode::kTrain), Mode::kTrain), Mode::kTrain);
  Tensor temb = probe.target_encoder().forward(vb, Mode::kTrainFrozenStats);
  Tensor tproj = probe.target_projector().forward(temb, Mode::kTrainFrozenStats);
  std::vector<float> pair = byol_pair_losses(pred, tproj);
  double mean_pair = 0.0;
  for (float v : pair) mean_pair += v;
  mean_pair /= static_cast<double>(pair.size());

  Tensor loss = model.byol_loss(va, vb);
  CHECK(loss.item() == doctest::Approx(mean_pair).epsilon(1e-5));
  CHECK(loss.item() >= 0.0);
  CHECK(loss.item() <= 4.0);

  loss.backward();
  for (auto& ref : model.target_refs()) CHECK(!ref.tensor->has_grad());
  bool online_got_grads = false;
  for (auto& ref : model.online_refs())
    if (ref.name.rfind("predictor", 0) == 0 && ref.tensor->has_grad()) online_got_grads = true;
  CHECK(online_got_grads);
}

TEST_CASE("ema update follows the stated rule") {
  MultiTaskModel model(tiny_config(8, 0.99), 19);
  auto onlines = model.online_refs();
  // Perturb online parameters so the branches differ.
  SplitRng rng(20);
  for (auto& ref : onlines)
    for (auto& v : ref.tensor->data()) v += static_cast<float>(rng.uniform(-0.5, 0.5));

  // Snapshot targets, run one update, check tau*old + (1-tau)*online bitwise.
  std::vector<std::vector<float>> old_target;
  for (auto& ref : model.target_refs()) old_target.push_back(ref.tensor->data());
  model.ema_update();
  const float tau = 0.99f;
  std::size_t i = 0;
  auto targets = model.target_refs();
  // target_refs order matches the ema pairing (encoder then projector).
  std::vector<ParamRef<float>> paired_online;
  for (auto& ref : onlines) {
    if (ref.name.rfind("encoder", 0) == 0 || ref.name.rfind("projector", 0) == 0)
      paired_online.push_back(ref);
  }
  REQUIRE(paired_online.size() == targets.size());
  for (std::size_t p = 0; p < targets.size(); ++p) {
    const auto& tv = targets[p].tensor->data();
    const auto& ov = paired_online[p].tensor->data();
    for (std::size_t j = 0; j < tv.size(); ++j) {
      const float expect = tau * old_target[p][j] + (1.0f - tau) * ov[j];
      CHECK(std::memcmp(&tv[j], &expect, sizeof(float)) == 0);
    }
    ++i;
  }
}

TEST_CASE("tau=0 makes the target an instantaneous copy of the online branch") {
  MultiTaskModel model(tiny_config(8, 0.0), 21);
  SplitRng rng(22);
  for (auto& ref : model.online_refs())
    for (auto& v : ref.tensor->data()) v += static_cast<float>(rng.uniform(-0.5, 0.5));
  model.ema_update();

  std::vector<ParamRef<float>> paired_online;
  for (auto& ref : model.online_refs())
    if (ref.name.rfind("encoder", 0) == 0 || ref.name.rfind("projector", 0) == 0)
      paired_online.push_back(ref);
  auto targets = model.target_refs();
  for (std::size_t p = 0; p < targets.size(); ++p)
    CHECK(targets[p].tensor->data() == paired_online[p].tensor->data());
}

TEST_CASE("tau=1 is rejected by validation") {
  CHECK_THROWS_AS(MultiTaskModel(tiny_config(8, 1.0), 23), ConfigError);
}

TEST_CASE("ema update is linear in the parameters") {
  MultiTaskModel a(tiny_config(), 24), b(tiny_config(), 25);
  MultiTaskModel c(tiny_config(), 24);
  // c = 0.5*(a + b) on every tensor (online and target).
  {
    auto ra = a.all_refs();
    auto rb = b.all_refs();
    auto rc = c.all_refs();
    for (std::size_t i = 0; i < rc.size(); ++i)
      for (std::size_t j = 0; j < rc[i].tensor->data().size(); ++j)
        rc[i].tensor->data()[j] =
            0.5f * (ra[i].tensor->data()[j] + rb[i].tensor->data()[j]);
  }
  a.ema_update();
  b.ema_update();
  c.ema_update();
  auto ta = a.target_refs();
  auto tb = b.target_refs();
  auto tc = c.target_refs();
  for (std::size_t i = 0; i < tc.size(); ++i)
    for (std::size_t j = 0; j < tc[i].tensor->data().size(); ++j)
      CHECK(tc[i].tensor->data()[j] ==
            doctest::Approx(0.5f * (ta[i].tensor->data()[j] + tb[i].tensor->data()[j]))
                .epsilon(1e-6));
}

TEST_CASE("total loss is the fixed-order sum of its components") {
  MultiTaskModel model(tiny_config(), 26);
  TrainingBatch batch = make_batch(4, 8, 27, 8);
  TaskSet all{true, true, true};
  LossGraph<float> graph =
      total_loss(model, batch, all, ViewPolicy::kSeparateViews, test_plan(8));
  TaskLossSet v = graph.values();
  const float expect = (static_cast<float>(*v.supervised) + static_cast<float>(*v.rotation)) +
                       static_cast<float>(*v.byol);
  CHECK(static_cast<float>(v.total) == expect);  // bitwise: same op order
}

TEST_CASE("single active task: total equals that task's loss") {
  MultiTaskModel model(tiny_config(), 28);
  TrainingBatch batch = make_batch(4, 8, 29, 8);
  LossGraph<float> graph = total_loss(model, batch, TaskSet{true, false, false},
                                      ViewPolicy::kSeparateViews, test_plan(8));
  CHECK(graph.values().total == *graph.values().supervised);
  CHECK(!graph.rotation.has_value());
  CHECK(!graph.byol.has_value());
}

TEST_CASE("joint total equals independently computed per-task losses (same seeds)") {
  TrainingBatch batch = make_batch(4, 8, 30, 8);
  AugmentPlan plan = test_plan(8);
  TaskSet both{true, false, true};

  MultiTaskModel joint(tiny_config(), 31);
  LossGraph<float> graph =
      total_loss(joint, batch, both, ViewPolicy::kSharedViews, plan);
  TaskLossSet v = graph.values();

  // Rebuild the shared views independently and evaluate each task on a
  // fresh identically initialized model.
  Tensor view_a = model_detail::augment_batch(plan.hard_spec, batch.images, batch.item_ids,
                                              batch.rng, rng_stream::kByolAugmentA);
  Tensor view_b = model_detail::augment_batch(plan.hard_spec, batch.images, batch.item_ids,
                                              batch.rng, rng_stream::kByolAugmentB);
  MultiTaskModel m_sup(tiny_config(), 31);
  const double sup = m_sup.supervised_loss(view_a, batch.labels).item();
  MultiTaskModel m_byol(tiny_config(), 31);
  const double byol = m_byol.byol_loss(view_a, view_b).item();

  CHECK(v.total == doctest::Approx(sup + byol).epsilon(1e-7));
  CHECK(*v.supervised == doctest::Approx(sup).epsilon(1e-7));
  CHECK(*v.byol == doctest::Approx(byol).epsilon(1e-7));
  CHECK(graph.views_per_image == 2);
}

TEST_CASE("encoder gradients add across tasks (64-bit check)") {
  ModelConfig cfg = tiny_config();
  TrainingBatch batch = make_batch(4, 8, 32, 8);
  AugmentPlan plan = test_plan(8);
  TaskSet both{true, false, true};

  auto encoder_grads = [&](MultiTaskModelT<double>& m, const TaskSet& tasks) {
    LossGraph<double> g = total_loss(m, batch, tasks, ViewPolicy::kSharedViews, plan);
    g.total.backward();
    std::vector<double> out;
    for (auto& ref : m.online_refs())
      if (ref.name.rfind("encoder", 0) == 0) {
        const auto& gr =
            ref.tensor->has_grad() ? ref.tensor->grad()
                                   : std::vector<double>(ref.tensor->data().size(), 0.0);
        out.insert(out.end(), gr.begin(), gr.end());
      }
    return out;
  };

  MultiTaskModelT<double> joint(cfg, 33);
  std::vector<double> gj = encoder_grads(joint, both);
  // Per-task gradients with identical views: isolate each term by zeroing
  // the other task's weight (streams and views stay bit-identical).
  ModelConfig sup_only = cfg;
  sup_only.weights.byol = 0.0;
  MultiTaskModelT<double> m1(sup_only, 33);
  std::vector<double> g1 = encoder_grads(m1, both);
  ModelConfig byol_only = cfg;
  byol_only.weights.supervised = 0.0;
  MultiTaskModelT<double> m2(byol_only, 33);
  std::vector<double> g2 = encoder_grads(m2, both);

  REQUIRE(gj.size() == g1.size());
  for (std::size_t i = 0; i < gj.size(); ++i)
    CHECK(gj[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-6));
}

TEST_CASE("rotation-head gradients stay empty when the task is inactive") {
  MultiTaskModel model(tiny_config(), 34);
  TrainingBatch batch = make_batch(4, 8, 35, 8);
  LossGraph<float> graph = total_loss(model, batch, TaskSet{true, false, true},
                                      ViewPolicy::kSharedViews, test_plan(8));
  graph.total.backward();
  for (auto& ref : model.online_refs()) {
    if (ref.name.rfind("rotation_head", 0) == 0) CHECK(!ref.tensor->has_grad());
    if (ref.name.rfind("encoder", 0) == 0) CHECK(ref.tensor->has_grad());
  }
  for (auto& ref : model.target_refs()) CHECK(!ref.tensor->has_grad());
}

TEST_CASE("view accounting per policy") {
  TrainingBatch batch = make_batch(3, 8, 36, 8);
  AugmentPlan plan = test_plan(8);
  auto views = [&](TaskSet tasks, ViewPolicy policy, std::uint64_t seed) {
    MultiTaskModel m(tiny_config(), seed);
    return total_loss(m, batch, tasks, policy, plan).views_per_image;
  };
  CHECK(views(TaskSet{true, false, true}, ViewPolicy::kSharedViews, 37) == 2);
  CHECK(views(TaskSet{true, false, true}, ViewPolicy::kSeparateViews, 38) == 3);
  CHECK(views(TaskSet{true, true, true}, ViewPolicy::kSeparateViews, 39) == 4);
  CHECK(views(TaskSet{true, false, false}, ViewPolicy::kSeparateViews, 40) == 1);
  CHECK(views(TaskSet{true, true, true}, ViewPolicy::kSharedViews, 41) == 2);
}

TEST_CASE("shared policies require the byol task") {
  MultiTaskModel model(tiny_config(), 42);
  TrainingBatch batch = make_batch(3, 8, 43, 8);
  CHECK_THROWS_AS(total_loss(model, batch, TaskSet{true, false, false},
                             ViewPolicy::kSharedViews, test_plan(8)),
                  ConfigError);
  CHECK_THROWS_AS(total_loss(model, batch, TaskSet{false, false, false},
                             ViewPolicy::kSeparateViews, test_plan(8)),
                  ConfigError);
}

TEST_CASE("two-view supervised over identical views equals the single-view loss") {
  // 0.5*(L+L) == L exactly in floating point.
  MultiTaskModel model(tiny_config(), 44);
  Tensor view = random_batch(4, 8, 45);
  std::vector<std::int32_t> labels = {0, 1, 2, 3};
  Tensor la = model.supervised_loss(view, labels);
  Tensor lb = model.supervised_loss(view, labels);
  const float avg = 0.5f * (la.item() + lb.item());
  CHECK(avg == la.item());
}

TEST_CASE("loss weights scale the stored components") {
  ModelConfig cfg = tiny_config();
  cfg.weights.supervised = 2.0;
  MultiTaskModel weighted(cfg, 46);
  MultiTaskModel plain(tiny_config(), 46);
  TrainingBatch batch = make_batch(4, 8, 47, 8);
  auto vw = total_loss(weighted, batch, TaskSet{true, false, false},
                       ViewPolicy::kSeparateViews, test_plan(8))
                .values();
  auto vp = total_loss(plain, batch, TaskSet{true, false, false}, ViewPolicy::kSeparateViews,
                       test_plan(8))
                .values();
  CHECK(*vw.supervised == doctest::Approx(2.0 * *vp.supervised).epsilon(1e-6));
}

TEST_SUITE_END();
