#include "fsmt/runner.hpp"

#include <fstream>

#include "fsmt/checkpoint.hpp"

namespace fsmt {

LabeledDataset load_train_split(const RunConfig& cfg) {
  std::vector<LabeledDataset> tasks;
  for (const auto& m : cfg.manifests)
    tasks.push_back(ingest(DatasetManifest::load(m), cfg.train_split));
  return tasks.size() == 1 ? std::move(tasks.front()) : merge_meta_training(tasks);
}

RunOutputs run_training(const RunConfig& cfg, MetricsSink* extra_sink) {
  cfg.validate();
  if (cfg.output_dir.empty()) throw ConfigError("run: output_dir is not set");
  std::filesystem::create_directories(cfg.output_dir);

  RunOutputs out;
  out.config_snapshot = cfg.output_dir / "config_snapshot.cfg";
  {
    std::ofstream snap(out.config_snapshot);
    if (!snap) throw DataError("cannot write " + out.config_snapshot.string());
    snap << cfg.to_text();
  }

  LabeledDataset data = load_train_split(cfg);
  MultiTaskModel model(cfg.model_config(data.num_classes()), cfg.train.seed);

  out.metrics_csv = cfg.output_dir / "metrics.csv";
  CsvMetricsSink csv(out.metrics_csv);
  std::vector<MetricsSink*> sinks{&csv};
  if (extra_sink) sinks.push_back(extra_sink);
  TeeMetricsSink sink(sinks);

  TrainResult result = train(cfg.train, data, model, &sink, cfg.output_dir, cfg.augment_default,
                             cfg.augment_hard);
  out.final_checkpoint = result.final_checkpoint;
  out.epochs = std::move(result.epochs);
  return out;
}

}  // namespace fsmt
