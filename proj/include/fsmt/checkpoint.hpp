#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsmt/model.hpp"
#include "fsmt/tensor.hpp"

namespace fsmt {

// One record of the binary tensor snapshot format (see docs/formats.md):
// magic "FSMTSNAP", u32 version, u64 count, then per tensor
// (u32 name length, name bytes, u64 rank, u64 dims..., f32 data...),
// all little-endian.
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  std::int64_t numel() const { return shape_numel(shape); }
};

using TensorSnapshot = std::vector<NamedTensor>;

void save_snapshot(const std::filesystem::path& path, const TensorSnapshot& snapshot);
TensorSnapshot load_snapshot(const std::filesystem::path& path);

const NamedTensor* find_tensor(const TensorSnapshot& snapshot, const std::string& name);

// Model checkpoints are snapshots holding every online and target tensor
// (parameters and batch-norm buffers) plus `meta.*` records encoding the
// architecture, tau and the step counter.
TensorSnapshot checkpoint_snapshot(MultiTaskModel& model);
void save_checkpoint(const std::filesystem::path& path, MultiTaskModel& model);

ModelConfig checkpoint_model_config(const TensorSnapshot& snapshot);
MultiTaskModel load_checkpoint(const std::filesystem::path& path);
MultiTaskModel model_from_snapshot(const TensorSnapshot& snapshot);

}  // namespace fsmt
