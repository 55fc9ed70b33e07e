#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fsmt/tensor.hpp"

namespace fsmt {

// In-memory split: images as one contiguous [N,C,H,W] float block in [0,1],
// labels indexing class_names (sorted class-name order).
struct LabeledDataset {
  std::vector<float> images;
  std::int64_t n = 0, c = 0, h = 0, w = 0;
  std::vector<std::int32_t> labels;
  std::vector<std::string> class_names;
  std::string split;

  std::int64_t num_classes() const { return static_cast<std::int64_t>(class_names.size()); }
  std::int64_t image_numel() const { return c * h * w; }

  Tensor image(std::int64_t i) const;
  Tensor gather_images(const std::vector<std::int64_t>& indices) const;
  std::vector<std::vector<std::int64_t>> indices_by_class() const;
  void validate() const;
};

// Describes where a dataset lives and how its classes are split. Splits
// must be pairwise class-disjoint (the few-shot requirement).
struct DatasetManifest {
  std::filesystem::path root;
  std::string format = "image_folder";  // image_folder | packed_binary
  std::map<std::string, std::vector<std::string>> splits;
  std::int64_t image_size = 32;
  std::int64_t channels = 3;

  static DatasetManifest load(const std::filesystem::path& json_path);
  void save(const std::filesystem::path& json_path) const;
  void validate(bool check_files = true) const;
};

// Decodes one split to float arrays at the declared size (resizing if the
// stored images differ). Labels follow sorted class-name order.
LabeledDataset ingest(const DatasetManifest& manifest, const std::string& split);

// Union of several labeled training sets with a global class index over the
// merged label space. Examples are kept as-is (no deduplication); class
// names shared across tasks map to the same global index.
LabeledDataset merge_meta_training(const std::vector<LabeledDataset>& tasks);

// packed_binary layout: one snapshot file holding "<split>.images" [N,C,H,W]
// and "<split>.labels" [N] per split.
void write_packed_dataset(const std::filesystem::path& path,
                          const std::map<std::string, LabeledDataset>& splits);

}  // namespace fsmt
