#pragma once

#include <filesystem>
#include <vector>

#include "fsmt/config.hpp"
#include "fsmt/trainer.hpp"

namespace fsmt {

struct RunOutputs {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_csv;
  std::filesystem::path config_snapshot;
  std::vector<MetricsRecord> epochs;
};

// Ingests the training split(s) named by the config, merging when several
// manifests are given.
LabeledDataset load_train_split(const RunConfig& cfg);

// One full training run: snapshot the resolved config, train, write metrics
// and checkpoints under cfg.output_dir.
RunOutputs run_training(const RunConfig& cfg, MetricsSink* extra_sink = nullptr);

}  // namespace fsmt
