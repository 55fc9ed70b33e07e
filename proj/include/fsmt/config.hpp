#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fsmt/augment.hpp"
#include "fsmt/episodic.hpp"
#include "fsmt/model.hpp"
#include "fsmt/trainer.hpp"

namespace fsmt {

// section -> key -> value of a structured key=value config file.
using ConfigMap = std::map<std::string, std::map<std::string, std::string>>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap parse_config_file(const std::filesystem::path& path);

// Full run description. Built from a config file plus flat
// "section.key=value" overrides (flags beat file values); serializes to a
// canonical snapshot that reproduces the run when re-parsed.
struct RunConfig {
  std::vector<std::filesystem::path> manifests;
  std::string train_split = "train";
  std::string eval_split = "test";
  EncoderConfig encoder;
  HeadsConfig heads;
  TrainConfig train;
  EpisodeSpec eval;
  AugmentSpec augment_default;
  AugmentSpec augment_hard;
  TaskWeights weights;
  bool byol_symmetric = false;
  std::filesystem::path output_dir;

  static RunConfig from_map(const ConfigMap& map, const std::filesystem::path& base_dir = {});
  static RunConfig from_file(const std::filesystem::path& path,
                             const std::map<std::string, std::string>& overrides = {});

  std::string to_text() const;
  void validate() const;
  ModelConfig model_config(std::int64_t num_classes) const;
};

// Environment variable naming the default output root when neither the
// config file nor a flag sets one.
inline constexpr const char* kOutputRootEnv = "FSMT_OUTPUT_ROOT";

}  // namespace fsmt
