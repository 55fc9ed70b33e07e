#include "fsmt/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace fsmt {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'M', 'T', 'S', 'N', 'A', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  // Host is little-endian (x86/aarch64 builds); raw write matches the format.
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_snapshot(const std::filesystem::path& path, const TensorSnapshot& snapshot) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write snapshot " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, kVersion);
  write_le<std::uint64_t>(os, snapshot.size());
  for (const auto& t : snapshot) {
    if (t.numel() != static_cast<std::int64_t>(t.data.size()))
      throw DataError("snapshot tensor '" + t.name + "' has inconsistent shape");
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_le<std::uint64_t>(os, t.shape.size());
    for (std::int64_t d : t.shape) write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!os) throw DataError("failed writing snapshot " + path.string());
}

TensorSnapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open snapshot " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a tensor snapshot: " + path.string());
  const auto version = read_le<std::uint32_t>(is);
  if (version != kVersion)
    throw DataError("unsupported snapshot version " + std::to_string(version));
  const auto count = read_le<std::uint64_t>(is);
  TensorSnapshot out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = read_le<std::uint32_t>(is);
    t.name.resize(name_len);
    is.read(t.name.data(), name_len);
    const auto rank = read_le<std::uint64_t>(is);
    t.shape.resize(rank);
    for (auto& d : t.shape) d = static_cast<std::int64_t>(read_le<std::uint64_t>(is));
    t.data.resize(static_cast<std::size_t>(t.numel()));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw DataError("truncated snapshot " + path.string());
    out.push_back(std::move(t));
  }
  return out;
}

const NamedTensor* find_tensor(const TensorSnapshot& snapshot, const std::string& name) {
  for (const auto& t : snapshot)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

NamedTensor meta_scalar(const std::string& name, double v) {
  return {name, Shape{1}, {static_cast<float>(v)}};
}

double require_meta(const TensorSnapshot& snap, const std::string& name) {
  const NamedTensor* t = find_tensor(snap, name);
  if (!t) throw DataError("checkpoint is missing '" + name + "'");
  return static_cast<double>(t->data.at(0));
}

}  // namespace

TensorSnapshot checkpoint_snapshot(MultiTaskModel& model) {
  const ModelConfig& cfg = model.config();
  TensorSnapshot snap;
  snap.push_back(meta_scalar("meta.tau", cfg.tau));
  snap.push_back(meta_scalar("meta.step", static_cast<double>(model.step())));
  snap.push_back(meta_scalar("meta.num_classes", static_cast<double>(cfg.num_classes)));
  snap.push_back(meta_scalar("meta.byol_symmetric", cfg.byol_symmetric ? 1.0 : 0.0));
  snap.push_back({"meta.weights", Shape{3},
                  {static_cast<float>(cfg.weights.supervised),
                   static_cast<float>(cfg.weights.rotation),
                   static_cast<float>(cfg.weights.byol)}});
  snap.push_back(meta_scalar("meta.encoder.input_channels",
                             static_cast<double>(cfg.encoder.input_channels)));
  snap.push_back(meta_scalar("meta.encoder.input_size", static_cast<double>(cfg.encoder.input_size)));
  snap.push_back(meta_scalar("meta.encoder.block_kind",
                             cfg.encoder.block_kind == BlockKind::kResidual ? 1.0 : 0.0));
  snap.push_back(meta_scalar("meta.encoder.embedding_dim",
                             static_cast<double>(cfg.encoder.embedding_dim)));
  NamedTensor widths{"meta.encoder.stage_widths",
                     Shape{static_cast<std::int64_t>(cfg.encoder.stage_widths.size())},
                     {}};
  for (std::int64_t wd : cfg.encoder.stage_widths) widths.data.push_back(static_cast<float>(wd));
  snap.push_back(std::move(widths));
  snap.push_back({"meta.heads", Shape{3},
                  {static_cast<float>(cfg.heads.projector_hidden),
                   static_cast<float>(cfg.heads.projector_dim),
                   static_cast<float>(cfg.heads.predictor_hidden)}});
  for (auto& ref : model.all_refs())
    snap.push_back({ref.name, ref.tensor->shape(), ref.tensor->data()});
  return snap;
}

void save_checkpoint(const std::filesystem::path& path, MultiTaskModel& model) {
  save_snapshot(path, checkpoint_snapshot(model));
}

ModelConfig checkpoint_model_config(const TensorSnapshot& snap) {
  ModelConfig cfg;
  cfg.tau = require_meta(snap, "meta.tau");
  cfg.num_classes = static_cast<std::int64_t>(require_meta(snap, "meta.num_classes"));
  cfg.byol_symmetric = require_meta(snap, "meta.byol_symmetric") != 0.0;
  const NamedTensor* w = find_tensor(snap, "meta.weights");
  if (!w || w->data.size() != 3) throw DataError("checkpoint is missing 'meta.weights'");
  cfg.weights = {w->data[0], w->data[1], w->data[2]};
  cfg.encoder.input_channels =
      static_cast<std::int64_t>(require_meta(snap, "meta.encoder.input_channels"));
  cfg.encoder.input_size = static_cast<std::int64_t>(require_meta(snap, "meta.encoder.input_size"));
  cfg.encoder.block_kind = require_meta(snap, "meta.encoder.block_kind") != 0.0
                               ? BlockKind::kResidual
                               : BlockKind::kPlainConv;
  cfg.encoder.embedding_dim =
      static_cast<std::int64_t>(require_meta(snap, "meta.encoder.embedding_dim"));
  const NamedTensor* widths = find_tensor(snap, "meta.encoder.stage_widths");
  if (!widths) throw DataError("checkpoint is missing 'meta.encoder.stage_widths'");
  cfg.encoder.stage_widths.clear();
  for (float v : widths->data) cfg.encoder.stage_widths.push_back(static_cast<std::int64_t>(v));
  const NamedTensor* heads = find_tensor(snap, "meta.heads");
  if (!heads || heads->data.size() != 3) throw DataError("checkpoint is missing 'meta.heads'");
  cfg.heads.projector_hidden = static_cast<std::int64_t>(heads->data[0]);
  cfg.heads.projector_dim = static_cast<std::int64_t>(heads->data[1]);
  cfg.heads.predictor_hidden = static_cast<std::int64_t>(heads->data[2]);
  return cfg;
}

MultiTaskModel model_from_snapshot(const TensorSnapshot& snap) {
  ModelConfig cfg = checkpoint_model_config(snap);
  MultiTaskModel model(cfg, /*init_seed=*/0);
  model.set_step(static_cast<std::int64_t>(require_meta(snap, "meta.step")));
  for (auto& ref : model.all_refs()) {
    const NamedTensor* t = find_tensor(snap, ref.name);
    if (!t) throw DataError("checkpoint is missing tensor '" + ref.name + "'");
    if (t->shape != ref.tensor->shape())
      throw DataError("checkpoint tensor '" + ref.name + "' has shape " + shape_str(t->shape) +
                      ", model wants " + shape_str(ref.tensor->shape()));
    ref.tensor->data() = t->data;
  }
  return model;
}

MultiTaskModel load_checkpoint(const std::filesystem::path& path) {
  return model_from_snapshot(load_snapshot(path));
}

}  // namespace fsmt
