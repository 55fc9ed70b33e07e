#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fsmt/checkpoint.hpp"
#include "fsmt/config.hpp"
#include "fsmt/episodic.hpp"
#include "fsmt/runner.hpp"
#include "fsmt/toygen.hpp"
#include "fsmt/trainer.hpp"

namespace fs = std::filesystem;
using namespace fsmt;

namespace {

struct StdoutMetricsSink : MetricsSink {
  void on_epoch(const MetricsRecord& r) override {
    std::printf("epoch %3d  lr %-9.4g loss %-10.5g", r.epoch, r.lr, r.loss_total);
    if (r.loss_sup) std::printf("  sup %-10.5g", *r.loss_sup);
    if (r.loss_rot) std::printf("  rot %-10.5g", *r.loss_rot);
    if (r.loss_byol) std::printf("  byol %-10.5g", *r.loss_byol);
    std::printf("  %.1fs\n", r.wall_time_s);
    std::fflush(stdout);
  }
};

fs::path resolve_output_dir(const std::string& flag_out, const RunConfig& cfg) {
  if (!flag_out.empty()) return flag_out;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* root = std::getenv(kOutputRootEnv)) return fs::path(root) / "run";
  return fs::path("runs") / "run";
}

int cmd_train(const std::string& config_path, const std::map<std::string, std::string>& overrides,
              const std::string& flag_out) {
  RunConfig cfg = RunConfig::from_file(config_path, overrides);
  cfg.output_dir = resolve_output_dir(flag_out, cfg);
  cfg.validate();
  StdoutMetricsSink stream;
  RunOutputs out = run_training(cfg, &stream);
  std::printf("checkpoint: %s\n", out.final_checkpoint.string().c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& split, EpisodeSpec spec, int runs, const std::string& report_path,
             const std::string& episode_csv, const std::string& export_path) {
  MultiTaskModel model = load_checkpoint(checkpoint);
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  if (manifest.image_size != model.config().encoder.input_size ||
      manifest.channels != model.config().encoder.input_channels)
    throw ConfigError("checkpoint encoder expects " +
                      std::to_string(model.config().encoder.input_channels) + "x" +
                      std::to_string(model.config().encoder.input_size) + "x" +
                      std::to_string(model.config().encoder.input_size) + " inputs, manifest has " +
                      std::to_string(manifest.channels) + "x" + std::to_string(manifest.image_size) +
                      "x" + std::to_string(manifest.image_size));
  LabeledDataset data = ingest(manifest, split);

  if (!export_path.empty()) {
    Tensor emb = extract_embeddings(model, data);
    TensorSnapshot snap;
    snap.push_back({"embeddings", emb.shape(), emb.data()});
    NamedTensor labels{"labels", Shape{data.n}, {}};
    for (auto l : data.labels) labels.data.push_back(static_cast<float>(l));
    snap.push_back(std::move(labels));
    save_snapshot(export_path, snap);
    std::printf("embeddings: %s [%lld,%lld]\n", export_path.c_str(),
                static_cast<long long>(emb.dim(0)), static_cast<long long>(emb.dim(1)));
  }

  if (runs > 1) {
    MultiRunReport multi = evaluate_runs(model, data, spec, runs, checkpoint);
    for (std::size_t r = 0; r < multi.runs.size(); ++r)
      std::printf("run %zu: %.2f%% +- %.2f\n", r, multi.runs[r].mean_accuracy,
                  multi.runs[r].ci95.value_or(0.0));
    std::printf("across runs: %.2f%%", multi.mean_accuracy);
    if (multi.ci95) std::printf(" +- %.2f", *multi.ci95);
    std::printf("\n");
    if (!report_path.empty()) multi.runs.front().write_json(report_path);
    return 0;
  }

  EvalReport report = evaluate(model, data, spec, checkpoint);
  std::cout << report.to_json() << "\n";
  if (!report_path.empty()) report.write_json(report_path);
  if (!episode_csv.empty()) report.write_episode_csv(episode_csv);
  return 0;
}

int cmd_extract(const std::string& checkpoint, const std::string& manifest_path,
                const std::string& split, const std::string& out_path) {
  MultiTaskModel model = load_checkpoint(checkpoint);
  LabeledDataset data = ingest(DatasetManifest::load(manifest_path), split);
  Tensor emb = extract_embeddings(model, data);
  TensorSnapshot snap;
  snap.push_back({"embeddings", emb.shape(), emb.data()});
  NamedTensor labels{"labels", Shape{data.n}, {}};
  for (auto l : data.labels) labels.data.push_back(static_cast<float>(l));
  snap.push_back(std::move(labels));
  save_snapshot(out_path, snap);
  std::printf("embeddings: %s [%lld,%lld]\n", out_path.c_str(),
              static_cast<long long>(emb.dim(0)), static_cast<long long>(emb.dim(1)));
  return 0;
}

int cmd_inspect(const std::string& checkpoint, bool as_json) {
  TensorSnapshot snap = load_snapshot(checkpoint);
  if (as_json) {
    std::printf("{\n");
    for (std::size_t i = 0; i < snap.size(); ++i) {
      std::printf("  \"%s\": %s%s\n", snap[i].name.c_str(), shape_str(snap[i].shape).c_str(),
                  i + 1 < snap.size() ? "," : "");
    }
    std::printf("}\n");
    return 0;
  }
  std::int64_t total = 0;
  for (const auto& t : snap) {
    std::printf("%-48s %-16s %lld\n", t.name.c_str(), shape_str(t.shape).c_str(),
                static_cast<long long>(t.numel()));
    total += t.numel();
  }
  std::printf("%zu tensors, %lld values\n", snap.size(), static_cast<long long>(total));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task few-shot training and episodic evaluation"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on the merged meta-training split");
  std::string config_path, flag_out;
  std::map<std::string, std::string> overrides;
  std::optional<std::uint64_t> o_seed;
  std::optional<int> o_epochs;
  std::string o_tasks, o_policy, o_sup_aug;
  train_cmd->add_option("--config", config_path, "Run config file")->required();
  train_cmd->add_option("--seed", o_seed, "Override train.seed");
  train_cmd->add_option("--epochs", o_epochs, "Override train.epochs");
  train_cmd->add_option("--tasks", o_tasks, "Override train.tasks (csv of sup,rot,byol)");
  train_cmd->add_option("--view-policy", o_policy, "Override train.view_policy");
  train_cmd->add_option("--sup-augment", o_sup_aug, "Override train.sup_augment");
  train_cmd->add_option("--out", flag_out, "Output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Episodic N-way K-shot evaluation");
  std::string checkpoint, manifest_path, split = "test";
  std::string report_path, episode_csv, export_path;
  EpisodeSpec spec;
  int runs = 1;
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--manifest", manifest_path, "Dataset manifest")->required();
  eval_cmd->add_option("--split", split, "Dataset split (default test)");
  eval_cmd->add_option("--episodes", spec.n_episodes, "Number of episodes");
  eval_cmd->add_option("--n-way", spec.n_way, "Classes per episode");
  eval_cmd->add_option("--k-shot", spec.k_shot, "Support examples per class");
  eval_cmd->add_option("--q-query", spec.q_query, "Query examples per class");
  eval_cmd->add_option("--seed", spec.seed, "Episode sampling seed");
  eval_cmd->add_option("--runs", runs, "Independent runs to aggregate");
  eval_cmd->add_option("--report", report_path, "Write EvalReport JSON here");
  eval_cmd->add_option("--per-episode-csv", episode_csv, "Write per-episode accuracies");
  eval_cmd->add_option("--export-embeddings", export_path, "Write split embeddings (binary)");

  // gen-toy
  auto* gen_cmd = app.add_subcommand("gen-toy", "Generate the synthetic toy corpus");
  ToyCorpusSpec toy;
  std::string toy_out;
  gen_cmd->add_option("--out", toy_out, "Output directory")->required();
  gen_cmd->add_option("--classes", toy.num_classes, "Total classes");
  gen_cmd->add_option("--per-class", toy.per_class, "Images per class");
  gen_cmd->add_option("--size", toy.image_size, "Image size in pixels");
  gen_cmd->add_option("--seed", toy.seed, "Generation seed");
  gen_cmd->add_option("--train", toy.train_classes, "Train classes");
  gen_cmd->add_option("--val", toy.val_classes, "Validation classes");
  gen_cmd->add_option("--test", toy.test_classes, "Test classes");
  gen_cmd->add_option("--style", toy.style, "patterns|noise");

  // extract-embeddings
  auto* ext_cmd = app.add_subcommand("extract-embeddings", "Embed a split with a frozen encoder");
  std::string ext_checkpoint, ext_manifest, ext_split = "test", ext_out;
  ext_cmd->add_option("--checkpoint", ext_checkpoint, "Model checkpoint")->required();
  ext_cmd->add_option("--manifest", ext_manifest, "Dataset manifest")->required();
  ext_cmd->add_option("--split", ext_split, "Dataset split");
  ext_cmd->add_option("--out", ext_out, "Output snapshot file")->required();

  // inspect-checkpoint
  auto* ins_cmd = app.add_subcommand("inspect-checkpoint", "List the tensors in a checkpoint");
  std::string ins_checkpoint;
  bool ins_json = false;
  ins_cmd->add_option("--checkpoint", ins_checkpoint, "Snapshot file")->required();
  ins_cmd->add_flag("--json", ins_json, "Emit JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      if (o_seed) overrides["train.seed"] = std::to_string(*o_seed);
      if (o_epochs) overrides["train.epochs"] = std::to_string(*o_epochs);
      if (!o_tasks.empty()) overrides["train.tasks"] = o_tasks;
      if (!o_policy.empty()) overrides["train.view_policy"] = o_policy;
      if (!o_sup_aug.empty()) overrides["train.sup_augment"] = o_sup_aug;
      return cmd_train(config_path, overrides, flag_out);
    }
    if (*eval_cmd)
      return cmd_eval(checkpoint, manifest_path, split, spec, runs, report_path, episode_csv,
                      export_path);
    if (*gen_cmd) {
      generate_toy_corpus(toy, toy_out);
      std::printf("manifest: %s\n", (fs::path(toy_out) / "manifest.json").string().c_str());
      return 0;
    }
    if (*ext_cmd) return cmd_extract(ext_checkpoint, ext_manifest, ext_split, ext_out);
    if (*ins_cmd) return cmd_inspect(ins_checkpoint, ins_json);
  } catch (const NonFiniteLossError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
