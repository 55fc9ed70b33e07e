#include "fsmt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "fsmt/checkpoint.hpp"

namespace fsmt {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (batch norm)");
  if (lr <= 0.0) throw ConfigError("train: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (decay_factor <= 0.0) throw ConfigError("train: decay_factor must be > 0");
  if (tau < 0.0 || tau >= 1.0) throw ConfigError("train: tau must be in [0,1)");
  if (!tasks.any()) throw ConfigError("train: no active tasks");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] < 0 || decay_epochs[i] >= epochs)
      throw ConfigError("train: decay epoch " + std::to_string(decay_epochs[i]) +
                        " outside [0," + std::to_string(epochs) + ")");
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
      throw ConfigError("train: decay_epochs must be strictly increasing");
  }
}

double lr_at_epoch(const TrainConfig& config, int epoch) {
  double lr = config.lr;
  for (int d : config.decay_epochs)
    if (d <= epoch) lr *= config.decay_factor;
  return lr;
}

CsvMetricsSink::CsvMetricsSink(const std::filesystem::path& path) : os_(path) {
  if (!os_) throw DataError("cannot write metrics csv " + path.string());
  os_ << "# fsmt metrics v1\n";
  os_ << "epoch,lr,loss_total,loss_sup,loss_rot,loss_byol,wall_time_s\n";
  os_.flush();
}

std::string CsvMetricsSink::format_row(const MetricsRecord& r) {
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << r.epoch << "," << num(r.lr) << "," << num(r.loss_total) << ","
     << (r.loss_sup ? num(*r.loss_sup) : "") << "," << (r.loss_rot ? num(*r.loss_rot) : "")
     << "," << (r.loss_byol ? num(*r.loss_byol) : "") << ",";
  std::snprintf(buf, sizeof(buf), "%.3f", r.wall_time_s);
  os << buf;
  return os.str();
}

void CsvMetricsSink::on_epoch(const MetricsRecord& record) {
  os_ << format_row(record) << "\n";
  os_.flush();
}

NonFiniteLossError::NonFiniteLossError(int epoch_, int step_, const TaskLossSet& losses_)
    : Error([&] {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch_ << " step " << step_ << " (total="
           << losses_.total;
        if (losses_.supervised) os << ", sup=" << *losses_.supervised;
        if (losses_.rotation) os << ", rot=" << *losses_.rotation;
        if (losses_.byol) os << ", byol=" << *losses_.byol;
        os << ")";
        return os.str();
      }()),
      epoch(epoch_),
      step(step_),
      losses(losses_) {}

void SgdState::init(const std::vector<ParamRef<float>>& params) {
  velocity.clear();
  for (const auto& p : params)
    velocity.emplace_back(static_cast<std::size_t>(p.tensor->numel()), 0.0f);
  step = 0;
}

void sgd_step(SgdState& state, std::vector<ParamRef<float>>& params, double momentum,
              double weight_decay) {
  if (state.velocity.size() != params.size())
    throw Error("sgd_step: optimizer state does not match parameter list");
  const float m = static_cast<float>(momentum);
  const float lr = static_cast<float>(state.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.tensor->has_grad())
      throw Error("sgd_step: missing gradient on trainable parameter '" + p.name + "'");
    const float wd = p.decay ? static_cast<float>(weight_decay) : 0.0f;
    auto& v = state.velocity[i];
    auto& value = p.tensor->data();
    const auto& grad = p.tensor->grad();
    for (std::size_t j = 0; j < value.size(); ++j) {
      v[j] = m * v[j] + (grad[j] + wd * value[j]);
      value[j] -= lr * v[j];
    }
    p.tensor->zero_grad();
  }
  ++state.step;
}

std::vector<ParamRef<float>> optimizer_params(MultiTaskModel& model, const TaskSet& tasks) {
  std::vector<ParamRef<float>> out;
  auto starts_with = [](const std::string& s, const char* prefix) {
    return s.rfind(prefix, 0) == 0;
  };
  for (auto& ref : model.online_refs()) {
    if (starts_with(ref.name, "classifier") && !tasks.supervised) continue;
    if (starts_with(ref.name, "rotation_head") && !tasks.rotation) continue;
    if ((starts_with(ref.name, "projector") || starts_with(ref.name, "predictor")) && !tasks.byol)
      continue;
    out.push_back(ref);
  }
  return out;
}

std::vector<std::string> weight_decay_param_names(MultiTaskModel& model, const TaskSet& tasks) {
  std::vector<std::string> out;
  for (const auto& ref : optimizer_params(model, tasks))
    if (ref.decay) out.push_back(ref.name);
  return out;
}

namespace {

constexpr std::uint64_t kEpochScope = 10;

bool all_finite(const TaskLossSet& v) {
  auto ok = [](double x) { return std::isfinite(x); };
  if (!ok(v.total)) return false;
  if (v.supervised && !ok(*v.supervised)) return false;
  if (v.rotation && !ok(*v.rotation)) return false;
  if (v.byol && !ok(*v.byol)) return false;
  return true;
}

}  // namespace

TrainResult train(const TrainConfig& config, const LabeledDataset& data, MultiTaskModel& model,
                  MetricsSink* sink, const std::filesystem::path& out_dir,
                  const AugmentSpec& default_spec, const AugmentSpec& hard_spec,
                  TrainerTrace* trace) {
  config.validate();
  data.validate();
  if (data.n == 0) throw DataError("train: empty dataset");
  if (config.tasks.supervised && data.num_classes() != model.config().num_classes)
    throw ConfigError("train: model expects " + std::to_string(model.config().num_classes) +
                      " classes, dataset has " + std::to_string(data.num_classes()));
  std::filesystem::create_directories(out_dir);

  AugmentPlan plan{default_spec, hard_spec, config.sup_augment};
  SplitRng root(config.seed);
  std::vector<ParamRef<float>> params = optimizer_params(model, config.tasks);
  SgdState opt;
  opt.init(params);

  const std::int64_t n = data.n;
  const std::int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    opt.lr = lr_at_epoch(config, epoch);

    std::iota(perm.begin(), perm.end(), 0);
    SplitRng shuffle_rng = root.fork(rng_stream::kShuffle, epoch);
    for (std::int64_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(shuffle_rng.uniform_int(
          static_cast<std::uint64_t>(i + 1)));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }

    double sum_total = 0.0, sum_sup = 0.0, sum_rot = 0.0, sum_byol = 0.0;
    for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
      const std::int64_t lo = step * config.batch_size;
      const std::int64_t hi = std::min(lo + config.batch_size, n);
      std::vector<std::int64_t> idx(perm.begin() + lo, perm.begin() + hi);

      TrainingBatch batch;
      batch.images = data.gather_images(idx);
      batch.labels.reserve(idx.size());
      for (std::int64_t i : idx) batch.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
      batch.item_ids = idx;
      batch.rng = root.fork(kEpochScope, static_cast<std::uint64_t>(epoch));

      LossGraph<float> graph =
          total_loss(model, batch, config.tasks, config.view_policy, plan);
      const TaskLossSet values = graph.values();
      if (!all_finite(values))
        throw NonFiniteLossError(epoch, static_cast<int>(step), values);
      if (trace) trace->step_views_per_image.push_back(graph.views_per_image);

      graph.total.backward();
      sgd_step(opt, params, config.momentum, config.weight_decay);
      if (config.tasks.byol) model.ema_update();
      model.increment_step();

      sum_total += values.total;
      if (values.supervised) sum_sup += *values.supervised;
      if (values.rotation) sum_rot += *values.rotation;
      if (values.byol) sum_byol += *values.byol;
    }

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.lr;
    rec.steps = static_cast<int>(steps_per_epoch);
    rec.loss_total = sum_total / static_cast<double>(steps_per_epoch);
    if (config.tasks.supervised) rec.loss_sup = sum_sup / static_cast<double>(steps_per_epoch);
    if (config.tasks.rotation) rec.loss_rot = sum_rot / static_cast<double>(steps_per_epoch);
    if (config.tasks.byol) rec.loss_byol = sum_byol / static_cast<double>(steps_per_epoch);
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    if (sink) sink->on_epoch(rec);
    result.epochs.push_back(rec);

    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 &&
        epoch + 1 < config.epochs) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.bin", epoch + 1);
      save_checkpoint(out_dir / name, model);
    }
  }

  result.final_checkpoint = out_dir / "checkpoint_final.bin";
  save_checkpoint(result.final_checkpoint, model);
  return result;
}

}  // namespace fsmt
