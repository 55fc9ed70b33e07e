#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fsmt/dataset.hpp"
#include "fsmt/model.hpp"
#include "fsmt/nn.hpp"
#include "fsmt/rng.hpp"

namespace fsmt {

struct EpisodeSpec {
  int n_way = 5;
  int k_shot = 5;
  int q_query = 15;
  int n_episodes = 250;
  std::uint64_t seed = 0;

  void validate(const LabeledDataset& data) const;
};

// One N-way K-shot task drawn from held-out classes. Indices refer to the
// source dataset; labels are episode-local in [0, n_way); class_map maps an
// episode label back to the global class id.
struct Episode {
  std::vector<std::int64_t> support_indices;
  std::vector<std::int64_t> query_indices;
  std::vector<std::int32_t> support_labels;
  std::vector<std::int32_t> query_labels;
  std::vector<std::int32_t> class_map;
};

// Samples N distinct classes, then per class K support + Q query examples
// without replacement and without support/query overlap.
Episode sample_episode(const LabeledDataset& data, const EpisodeSpec& spec, SplitRng& rng);

struct BaseLearnerOptions {
  int max_steps = 300;
  double loss_threshold = 0.01;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

struct BaseLearnerFit {
  nn::LinearT<float> classifier;  // zero-initialized linear layer over n_way classes
  int steps_run = 0;
  double final_loss = 0.0;
};

// Full-batch momentum-SGD on the support cross-entropy, at most max_steps
// steps, stopping as soon as the loss drops below the threshold (the check
// precedes the step, so threshold=inf runs zero steps).
BaseLearnerFit fit_base_learner(const Tensor& support_embeddings,
                                const std::vector<std::int32_t>& support_labels, int n_way,
                                const BaseLearnerOptions& opts = {});

double classifier_accuracy(BaseLearnerFit& fit, const Tensor& embeddings,
                           const std::vector<std::int32_t>& labels);

struct EvalReport {
  double mean_accuracy = 0.0;        // percent
  std::optional<double> ci95;        // percent points; absent for n_episodes < 2
  int n_episodes = 0;
  int n_way = 0, k_shot = 0, q_query = 0;
  std::vector<double> per_episode_accuracies;  // percent
  std::uint64_t seed = 0;
  std::string checkpoint;

  std::string to_json() const;
  void write_json(const std::filesystem::path& path) const;
  void write_episode_csv(const std::filesystem::path& path) const;
};

double mean_of(const std::vector<double>& xs);
// 1.96 * sample standard deviation / sqrt(n).
std::optional<double> ci95_of(const std::vector<double>& xs);

// Frozen-encoder evaluation: embeds the split once in eval mode, then per
// episode fits a fresh base learner on the support embeddings and scores the
// query set. Per-episode rng streams are derived from the episode index.
EvalReport evaluate(MultiTaskModel& model, const LabeledDataset& data, const EpisodeSpec& spec,
                    const std::string& checkpoint_id = "");

// Embeddings for the whole split, eval mode, processed in fixed-size batches.
Tensor extract_embeddings(MultiTaskModel& model, const LabeledDataset& data,
                          std::int64_t batch_size = 128);

struct MultiRunReport {
  std::vector<EvalReport> runs;
  double mean_accuracy = 0.0;        // mean of run means, percent
  std::optional<double> ci95;        // over run means
};

MultiRunReport evaluate_runs(MultiTaskModel& model, const LabeledDataset& data,
                             const EpisodeSpec& spec, int runs,
                             const std::string& checkpoint_id = "");

}  // namespace fsmt
