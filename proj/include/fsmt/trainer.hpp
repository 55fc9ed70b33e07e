#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fsmt/dataset.hpp"
#include "fsmt/model.hpp"

namespace fsmt {

struct TrainConfig {
  int epochs = 30;
  std::int64_t batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> decay_epochs;  // 0-based epochs at which lr picks up another factor
  double decay_factor = 0.1;
  double tau = 0.99;
  TaskSet tasks{true, false, false};
  ViewPolicy view_policy = ViewPolicy::kSeparateViews;
  AugKind sup_augment = AugKind::kDefault;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only

  void validate() const;
};

// lr(e) = lr * decay_factor^{#decay epochs <= e}, epochs 0-based.
double lr_at_epoch(const TrainConfig& config, int epoch);

struct MetricsRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  std::optional<double> loss_sup;
  std::optional<double> loss_rot;
  std::optional<double> loss_byol;
  double wall_time_s = 0.0;
  int steps = 0;
};

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void on_epoch(const MetricsRecord& record) = 0;
};

class MemoryMetricsSink : public MetricsSink {
 public:
  void on_epoch(const MetricsRecord& record) override { records.push_back(record); }
  std::vector<MetricsRecord> records;
};

// CSV rows: epoch,lr,loss_total,loss_sup,loss_rot,loss_byol,wall_time_s
// (empty cells for inactive tasks), flushed per epoch.
class CsvMetricsSink : public MetricsSink {
 public:
  explicit CsvMetricsSink(const std::filesystem::path& path);
  void on_epoch(const MetricsRecord& record) override;

  static std::string format_row(const MetricsRecord& record);

 private:
  std::ofstream os_;
};

class TeeMetricsSink : public MetricsSink {
 public:
  explicit TeeMetricsSink(std::vector<MetricsSink*> sinks) : sinks_(std::move(sinks)) {}
  void on_epoch(const MetricsRecord& record) override {
    for (auto* s : sinks_) s->on_epoch(record);
  }

 private:
  std::vector<MetricsSink*> sinks_;
};

// Aborts the run; carries the step diagnostics the non-finite policy requires.
struct NonFiniteLossError : Error {
  NonFiniteLossError(int epoch_, int step_, const TaskLossSet& losses_);
  int epoch;
  int step;
  TaskLossSet losses;
};

// Momentum-SGD state. Velocities align index-wise with the parameter list
// the optimizer was initialized with.
struct SgdState {
  std::vector<std::vector<float>> velocity;
  double lr = 0.0;
  std::int64_t step = 0;

  void init(const std::vector<ParamRef<float>>& params);
};

// v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v;
// gradients are zeroed afterwards. Parameters with decay=false (biases,
// batch-norm scale/shift) skip the weight-decay term. A trainable parameter
// without a populated gradient is an error.
void sgd_step(SgdState& state, std::vector<ParamRef<float>>& params, double momentum,
              double weight_decay);

// The parameters the optimizer owns for a given task set: encoder always,
// classifier with the supervised task, rotation head with rotation,
// projector+predictor with byol.
std::vector<ParamRef<float>> optimizer_params(MultiTaskModel& model, const TaskSet& tasks);
std::vector<std::string> weight_decay_param_names(MultiTaskModel& model, const TaskSet& tasks);

// Optional observability for tests: per-step augmented-view counts.
struct TrainerTrace {
  std::vector<int> step_views_per_image;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<MetricsRecord> epochs;
};

// Merged meta-training loop: per step builds views under the view policy,
// sums the active task losses, backpropagates, applies SGD and (with BYOL
// active) one EMA update. Emits one MetricsRecord per epoch and writes
// checkpoints under out_dir.
TrainResult train(const TrainConfig& config, const LabeledDataset& data, MultiTaskModel& model,
                  MetricsSink* sink, const std::filesystem::path& out_dir,
                  const AugmentSpec& default_spec, const AugmentSpec& hard_spec,
                  TrainerTrace* trace = nullptr);

}  // namespace fsmt
