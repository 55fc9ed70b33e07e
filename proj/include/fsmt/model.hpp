#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fsmt/augment.hpp"
#include "fsmt/nn.hpp"
#include "fsmt/ops.hpp"
#include "fsmt/rng.hpp"
#include "fsmt/tensor.hpp"

namespace fsmt {

struct HeadsConfig {
  std::int64_t projector_hidden = 512;
  std::int64_t projector_dim = 64;
  std::int64_t predictor_hidden = 512;

  void validate() const {
    if (projector_hidden < 1 || projector_dim < 1 || predictor_hidden < 1)
      throw ConfigError("heads: dimensions must be positive");
  }
};

struct TaskWeights {
  double supervised = 1.0;
  double rotation = 1.0;
  double byol = 1.0;
};

struct ModelConfig {
  EncoderConfig encoder;
  HeadsConfig heads;
  std::int64_t num_classes = 0;
  double tau = 0.99;
  bool byol_symmetric = false;
  TaskWeights weights;

  void validate() const {
    encoder.validate();
    heads.validate();
    if (num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
    if (tau < 0.0 || tau >= 1.0)
      throw ConfigError("model: tau must lie in [0,1), got " + std::to_string(tau));
  }
};

struct TaskSet {
  bool supervised = false;
  bool rotation = false;
  bool byol = false;

  bool any() const { return supervised || rotation || byol; }
};

enum class ViewPolicy { kSeparateViews, kSharedViews, kTwoViewSupervised };

ViewPolicy view_policy_from_string(const std::string& s);
const char* view_policy_name(ViewPolicy p);
TaskSet task_set_from_string(const std::string& csv);
std::string task_set_to_string(const TaskSet& t);

// Weighted per-task loss values for one batch; `total` is their sum in the
// fixed order supervised, rotation, byol.
struct TaskLossSet {
  std::optional<double> supervised;
  std::optional<double> rotation;
  std::optional<double> byol;
  double total = 0.0;
};

// Augmentation routing for one training step.
struct AugmentPlan {
  AugmentSpec default_spec;
  AugmentSpec hard_spec;
  AugKind sup_kind = AugKind::kDefault;  // pipeline of the supervised task

  const AugmentSpec& spec_for(AugKind kind) const;
};

// Per-row BYOL loss: squared distance of the unit-normalized rows,
// 2 - 2*cos(prediction, target). Shared by byol_loss and its oracle tests.
template <typename T>
std::vector<T> byol_pair_losses(const TensorT<T>& prediction, const TensorT<T>& target) {
  if (prediction.shape() != target.shape() || prediction.rank() != 2)
    throw ShapeError("byol_pair_losses: want matching [B,D] inputs, got " +
                     shape_str(prediction.shape()) + " and " + shape_str(target.shape()));
  const std::int64_t B = prediction.dim(0), D = prediction.dim(1);
  std::vector<T> out(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) {
    const T* p = prediction.data().data() + b * D;
    const T* t = target.data().data() + b * D;
    T np = 0, nt = 0;
    for (std::int64_t d = 0; d < D; ++d) {
      np += p[d] * p[d];
      nt += t[d] * t[d];
    }
    np = std::max(std::sqrt(np), T(1e-12));
    nt = std::max(std::sqrt(nt), T(1e-12));
    T s = 0;
    for (std::int64_t d = 0; d < D; ++d) {
      const T diff = p[d] / np - t[d] / nt;
      s += diff * diff;
    }
    out[static_cast<std::size_t>(b)] = s;
  }
  return out;
}

// Shared encoder plus the supervised, rotation and BYOL heads, with the EMA
// target branch (encoder+projector copy that never receives gradients).
template <typename T>
class MultiTaskModelT {
 public:
  MultiTaskModelT(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    SplitRng root(init_seed);
    SplitRng enc_rng = root.fork(rng_stream::kInit, 1);
    SplitRng cls_rng = root.fork(rng_stream::kInit, 2);
    encoder_ = EncoderT<T>(cfg_.encoder, enc_rng);
    classifier_.build(cfg_.encoder.embedding_dim, cfg_.num_classes, cls_rng);
    rotation_head_ = MlpT<T>(rotation_head_layers(cfg_.encoder.embedding_dim),
                             root.fork(rng_stream::kInit, 3));
    projector_ = MlpT<T>(projector_config().layers(), root.fork(rng_stream::kInit, 4));
    predictor_ = MlpT<T>(predictor_config().layers(), root.fork(rng_stream::kInit, 5));
    // The target branch starts as an exact copy of the online branch.
    target_encoder_ = EncoderT<T>(cfg_.encoder, enc_rng);
    target_projector_ = MlpT<T>(projector_config().layers(), root.fork(rng_stream::kInit, 4));
    copy_branch(online_ema_refs(), target_ema_refs());
    for (auto& ref : target_refs())
      if (ref.trainable) ref.tensor->set_requires_grad(false);
  }

  const ModelConfig& config() const { return cfg_; }
  double tau() const { return cfg_.tau; }
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }
  void increment_step() { ++step_; }

  MlpConfig projector_config() const {
    return MlpConfig{{{cfg_.encoder.embedding_dim, cfg_.heads.projector_hidden},
                      {cfg_.heads.projector_hidden, cfg_.heads.projector_dim}},
                     true};
  }
  MlpConfig predictor_config() const {
    return MlpConfig{{{cfg_.heads.projector_dim, cfg_.heads.predictor_hidden},
                      {cfg_.heads.predictor_hidden, cfg_.heads.projector_dim}},
                     true};
  }

  TensorT<T> encode(const TensorT<T>& images, Mode mode) { return encoder_.forward(images, mode); }

  TensorT<T> classify(const TensorT<T>& images, Mode mode) {
    return classifier_.forward(encode(images, mode));
  }

  // Mean cross-entropy of classifier(encode(images)) against base-class labels.
  TensorT<T> supervised_loss(const TensorT<T>& images, const std::vector<std::int32_t>& labels,
                             Mode mode = Mode::kTrain) {
    return ops::softmax_cross_entropy(classify(images, mode), labels);
  }

  // Rotates each image by its sampled label, then classifies the rotation
  // from the rotated image's embedding. Batch size is unchanged.
  std::pair<TensorT<T>, std::vector<int>> rotation_loss(const TensorT<T>& images, SplitRng& rng,
                                                        Mode mode = Mode::kTrain) {
    std::vector<int> labels(static_cast<std::size_t>(images.dim(0)));
    for (auto& l : labels) l = sample_rotation(rng);
    return {rotation_loss_with_labels(images, labels, mode), labels};
  }

  TensorT<T> rotation_loss_with_labels(const TensorT<T>& images, const std::vector<int>& labels,
                                       Mode mode = Mode::kTrain) {
    TensorT<T> rotated = rotate90_batch(images, labels);
    TensorT<T> logits = rotation_head_.forward(encode(rotated, mode), mode);
    std::vector<std::int32_t> l32(labels.begin(), labels.end());
    return ops::softmax_cross_entropy(logits, l32);
  }

  // Mean over the batch of || normalize(q(g(F(a)))) - normalize(g'(F'(b))) ||^2.
  // The target branch builds no lineage, so it contributes no gradients.
  TensorT<T> byol_loss(const TensorT<T>& view_a, const TensorT<T>& view_b) {
    TensorT<T> loss = byol_direction(view_a, view_b);
    if (cfg_.byol_symmetric) loss = ops::add(loss, byol_direction(view_b, view_a));
    return loss;
  }

  // ksi <- tau*ksi + (1-tau)*theta for every encoder+projector parameter.
  void ema_update() {
    const T tau = static_cast<T>(cfg_.tau);
    auto online = online_ema_refs();
    auto target = target_ema_refs();
    for (std::size_t i = 0; i < online.size(); ++i) {
      if (!online[i].trainable) continue;
      auto& o = online[i].tensor->data();
      auto& t = target[i].tensor->data();
      for (std::size_t j = 0; j < o.size(); ++j) t[j] = tau * t[j] + (T(1) - tau) * o[j];
    }
  }

  void zero_grad() {
    for (auto& ref : online_refs()) ref.tensor->zero_grad();
  }

  // Trainable online parameters (everything the optimizer updates).
  std::vector<ParamRef<T>> online_refs() {
    std::vector<ParamRef<T>> out;
    encoder_.collect("encoder", out);
    classifier_.collect("classifier", out);
    rotation_head_.collect("rotation_head", out);
    projector_.collect("projector", out);
    predictor_.collect("predictor", out);
    keep_trainable(out);
    return out;
  }

  std::vector<ParamRef<T>> target_refs() {
    std::vector<ParamRef<T>> out;
    target_encoder_.collect("target_encoder", out);
    target_projector_.collect("target_projector", out);
    keep_trainable(out);
    return out;
  }

  // Every named tensor (parameters and batch-norm buffers, online and target).
  std::vector<ParamRef<T>> all_refs() {
    std::vector<ParamRef<T>> out;
    encoder_.collect("encoder", out);
    classifier_.collect("classifier", out);
    rotation_head_.collect("rotation_head", out);
    projector_.collect("projector", out);
    predictor_.collect("predictor", out);
    target_encoder_.collect("target_encoder", out);
    target_projector_.collect("target_projector", out);
    return out;
  }

  EncoderT<T>& encoder() { return encoder_; }
  EncoderT<T>& target_encoder() { return target_encoder_; }
  nn::LinearT<T>& classifier() { return classifier_; }
  MlpT<T>& rotation_head() { return rotation_head_; }
  MlpT<T>& projector() { return projector_; }
  MlpT<T>& predictor() { return predictor_; }
  MlpT<T>& target_projector() { return target_projector_; }

 private:
  // EMA-covered branch: encoder + projector (the predictor has no target).
  std::vector<ParamRef<T>> online_ema_refs() {
    std::vector<ParamRef<T>> out;
    encoder_.collect("encoder", out);
    projector_.collect("projector", out);
    return out;
  }
  std::vector<ParamRef<T>> target_ema_refs() {
    std::vector<ParamRef<T>> out;
    target_encoder_.collect("encoder", out);
    target_projector_.collect("projector", out);
    return out;
  }

  static void keep_trainable(std::vector<ParamRef<T>>& refs) {
    std::erase_if(refs, [](const ParamRef<T>& r) { return !r.trainable; });
  }

  static void copy_branch(std::vector<ParamRef<T>> src, std::vector<ParamRef<T>> dst) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].tensor->data() = src[i].tensor->data();
  }

  TensorT<T> byol_direction(const TensorT<T>& online_view, const TensorT<T>& target_view) {
    TensorT<T> pred =
        predictor_.forward(projector_.forward(encode(online_view, Mode::kTrain), Mode::kTrain),
                           Mode::kTrain);
    TensorT<T> p = ops::l2_normalize(pred, 1);
    TensorT<T> target_emb = target_encoder_.forward(target_view, Mode::kTrainFrozenStats);
    TensorT<T> t = ops::l2_normalize(
        target_projector_.forward(target_emb, Mode::kTrainFrozenStats), 1);
    // mse averages over B*D; scaling by D gives sum over the embedding,
    // mean over the batch.
    return ops::scale(ops::mse(p, t), static_cast<T>(cfg_.heads.projector_dim));
  }

  ModelConfig cfg_;
  EncoderT<T> encoder_;
  nn::LinearT<T> classifier_;
  MlpT<T> rotation_head_;
  MlpT<T> projector_;
  MlpT<T> predictor_;
  EncoderT<T> target_encoder_;
  MlpT<T> target_projector_;
  std::int64_t step_ = 0;
};

using MultiTaskModel = MultiTaskModelT<float>;

// One training batch: raw images plus the derived randomness scope.
// `item_ids` are dataset indices; every per-item augmentation or label
// stream is forked from (rng, stream tag, item id), so results do not
// depend on batch composition or on which other tasks are active.
struct TrainingBatch {
  Tensor images;  // [B,C,H,W] float in [0,1]
  std::vector<std::int32_t> labels;
  std::vector<std::int64_t> item_ids;
  SplitRng rng{0};
};

template <typename T>
struct LossGraph {
  TensorT<T> total;
  std::optional<TensorT<T>> supervised;
  std::optional<TensorT<T>> rotation;
  std::optional<TensorT<T>> byol;
  std::vector<int> rotation_labels;
  int views_per_image = 0;

  TaskLossSet values() const {
    TaskLossSet v;
    if (supervised) v.supervised = static_cast<double>(supervised->item());
    if (rotation) v.rotation = static_cast<double>(rotation->item());
    if (byol) v.byol = static_cast<double>(byol->item());
    v.total = static_cast<double>(total.item());
    return v;
  }
};

namespace model_detail {

Tensor augment_batch(const AugmentSpec& spec, const Tensor& images,
                     const std::vector<std::int64_t>& item_ids, const SplitRng& scope,
                     std::uint64_t stream_tag);

std::vector<int> sample_rotation_labels(const std::vector<std::int64_t>& item_ids,
                                        const SplitRng& scope);

}  // namespace model_detail

// Eq.-2 sum of the active task losses under one of the three view policies:
//   separate_views      every task augments the batch with its own pipeline
//   shared_views        two hard views; supervised (and rotation) reuse view A
//   two_view_supervised shared views with the supervised loss averaged over both
template <typename T>
LossGraph<T> total_loss(MultiTaskModelT<T>& model, const TrainingBatch& batch,
                        const TaskSet& active, ViewPolicy policy, const AugmentPlan& plan) {
  if (!active.any()) throw ConfigError("total_loss: no active tasks");
  const bool shared = policy != ViewPolicy::kSeparateViews;
  if (shared && !active.byol)
    throw ConfigError(std::string("total_loss: view policy ") + view_policy_name(policy) +
                      " requires the byol task");

  const TaskWeights& w = model.config().weights;
  LossGraph<T> out;

  auto weighted = [&](TensorT<T> loss, double weight) {
    return weight == 1.0 ? loss : ops::scale(loss, static_cast<T>(weight));
  };

  TensorT<T> view_a, view_b;  // shared-policy views
  if (shared) {
    view_a = cast_tensor<T>(model_detail::augment_batch(plan.hard_spec, batch.images,
                                                        batch.item_ids, batch.rng,
                                                        rng_stream::kByolAugmentA));
    view_b = cast_tensor<T>(model_detail::augment_batch(plan.hard_spec, batch.images,
                                                        batch.item_ids, batch.rng,
                                                        rng_stream::kByolAugmentB));
    out.views_per_image = 2;
  }

  if (active.supervised) {
    TensorT<T> loss;
    if (policy == ViewPolicy::kSeparateViews) {
      Tensor view = model_detail::augment_batch(plan.spec_for(plan.sup_kind), batch.images,
                                                batch.item_ids, batch.rng,
                                                rng_stream::kSupAugment);
      out.views_per_image += 1;
      loss = model.supervised_loss(cast_tensor<T>(view), batch.labels);
    } else if (policy == ViewPolicy::kSharedViews) {
      loss = model.supervised_loss(view_a, batch.labels);
    } else {  // two-view: average of the per-view losses
      TensorT<T> la = model.supervised_loss(view_a, batch.labels);
      TensorT<T> lb = model.supervised_loss(view_b, batch.labels);
      loss = ops::scale(ops::add(la, lb), T(0.5));
    }
    out.supervised = weighted(loss, w.supervised);
  }

  if (active.rotation) {
    out.rotation_labels = model_detail::sample_rotation_labels(batch.item_ids, batch.rng);
    TensorT<T> rot_input;
    if (shared) {
      rot_input = view_a;  // reuse the first shared view
    } else {
      Tensor view = model_detail::augment_batch(plan.default_spec, batch.images, batch.item_ids,
                                                batch.rng, rng_stream::kRotAugment);
      out.views_per_image += 1;
      rot_input = cast_tensor<T>(view);
    }
    out.rotation =
        weighted(model.rotation_loss_with_labels(rot_input, out.rotation_labels), w.rotation);
  }

  if (active.byol) {
    if (!shared) {
      view_a = cast_tensor<T>(model_detail::augment_batch(plan.hard_spec, batch.images,
                                                          batch.item_ids, batch.rng,
                                                          rng_stream::kByolAugmentA));
      view_b = cast_tensor<T>(model_detail::augment_batch(plan.hard_spec, batch.images,
                                                          batch.item_ids, batch.rng,
                                                          rng_stream::kByolAugmentB));
      out.views_per_image += 2;
    }
    out.byol = weighted(model.byol_loss(view_a, view_b), w.byol);
  }

  // Fixed summation order: supervised, rotation, byol.
  for (auto* t : {&out.supervised, &out.rotation, &out.byol}) {
    if (!t->has_value()) continue;
    out.total = out.total.defined() ? ops::add(out.total, **t) : **t;
  }
  return out;
}

}  // namespace fsmt
