#include "fsmt/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "fsmt/checkpoint.hpp"
#include "fsmt/image_io.hpp"
#include "json.hpp"

namespace fsmt {

Tensor LabeledDataset::image(std::int64_t i) const {
  if (i < 0 || i >= n) throw DataError("image index " + std::to_string(i) + " out of range");
  const std::int64_t sz = image_numel();
  return Tensor({c, h, w},
                std::vector<float>(images.begin() + i * sz, images.begin() + (i + 1) * sz));
}

Tensor LabeledDataset::gather_images(const std::vector<std::int64_t>& indices) const {
  const std::int64_t sz = image_numel();
  std::vector<float> out;
  out.reserve(indices.size() * static_cast<std::size_t>(sz));
  for (std::int64_t i : indices) {
    if (i < 0 || i >= n) throw DataError("image index " + std::to_string(i) + " out of range");
    out.insert(out.end(), images.begin() + i * sz, images.begin() + (i + 1) * sz);
  }
  return Tensor({static_cast<std::int64_t>(indices.size()), c, h, w}, std::move(out));
}

std::vector<std::vector<std::int64_t>> LabeledDataset::indices_by_class() const {
  std::vector<std::vector<std::int64_t>> out(class_names.size());
  for (std::int64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
  return out;
}

void LabeledDataset::validate() const {
  if (static_cast<std::int64_t>(images.size()) != n * image_numel())
    throw DataError("dataset: image buffer size mismatch");
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw DataError("dataset: label count mismatch");
  for (std::int32_t l : labels)
    if (l < 0 || l >= num_classes())
      throw DataError("dataset: label " + std::to_string(l) + " out of range");
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& json_path) {
  std::ifstream is(json_path);
  if (!is) throw ConfigError("cannot open manifest " + json_path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + json_path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = j.at("root").get<std::string>();
  if (m.root.is_relative()) m.root = json_path.parent_path() / m.root;
  m.format = j.value("format", std::string("image_folder"));
  m.image_size = j.value("image_size", 32);
  m.channels = j.value("channels", 3);
  for (const auto& [split, classes] : j.at("splits").items())
    m.splits[split] = classes.get<std::vector<std::string>>();
  m.validate();
  return m;
}

void DatasetManifest::save(const std::filesystem::path& json_path) const {
  nlohmann::json j;
  j["root"] = root.string();
  j["format"] = format;
  j["image_size"] = image_size;
  j["channels"] = channels;
  j["splits"] = splits;
  std::ofstream os(json_path);
  if (!os) throw ConfigError("cannot write manifest " + json_path.string());
  os << j.dump(2) << "\n";
}

void DatasetManifest::validate(bool check_files) const {
  if (format != "image_folder" && format != "packed_binary")
    throw ConfigError("manifest: unknown format '" + format + "'");
  if (image_size < 1 || channels != 3)
    throw ConfigError("manifest: image_size must be >= 1 and channels must be 3");
  if (splits.empty()) throw ConfigError("manifest: no splits");
  // Few-shot requirement: class lists pairwise disjoint across splits.
  std::map<std::string, std::string> owner;
  for (const auto& [split, classes] : splits) {
    for (const auto& cls : classes) {
      auto [it, inserted] = owner.emplace(cls, split);
      if (!inserted)
        throw ConfigError("manifest: class '" + cls + "' appears in splits '" + it->second +
                          "' and '" + split + "'");
    }
  }
  if (!check_files) return;
  if (format == "image_folder") {
    for (const auto& [split, classes] : splits)
      for (const auto& cls : classes) {
        const auto dir = root / split / cls;
        if (!std::filesystem::is_directory(dir))
          throw ConfigError("manifest: missing class directory " + dir.string());
      }
  } else if (!std::filesystem::is_regular_file(root)) {
    throw ConfigError("manifest: missing packed dataset file " + root.string());
  }
}

namespace {

LabeledDataset ingest_image_folder(const DatasetManifest& m, const std::string& split,
                                   const std::vector<std::string>& classes) {
  LabeledDataset ds;
  ds.split = split;
  ds.c = m.channels;
  ds.h = m.image_size;
  ds.w = m.image_size;
  ds.class_names = classes;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    const auto dir = m.root / split / classes[label];
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".png")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("ingest: class directory " + dir.string() + " is empty");
    for (const auto& f : files) {
      ImageU8 img = read_png(f);
      std::vector<float> chw = to_chw_float(img);
      if (img.height != m.image_size || img.width != m.image_size)
        chw = resize_bilinear_chw(chw.data(), 3, img.height, img.width,
                                  static_cast<int>(m.image_size),
                                  static_cast<int>(m.image_size));
      ds.images.insert(ds.images.end(), chw.begin(), chw.end());
      ds.labels.push_back(static_cast<std::int32_t>(label));
      ++ds.n;
    }
  }
  return ds;
}

LabeledDataset ingest_packed(const DatasetManifest& m, const std::string& split,
                             const std::vector<std::string>& classes) {
  TensorSnapshot snap = load_snapshot(m.root);
  const NamedTensor* images = find_tensor(snap, split + ".images");
  const NamedTensor* labels = find_tensor(snap, split + ".labels");
  if (!images || !labels)
    throw DataError("packed dataset " + m.root.string() + " lacks split '" + split + "'");
  if (images->shape.size() != 4)
    throw DataError("packed dataset: images must be [N,C,H,W]");
  LabeledDataset ds;
  ds.split = split;
  ds.n = images->shape[0];
  ds.c = images->shape[1];
  ds.h = images->shape[2];
  ds.w = images->shape[3];
  ds.class_names = classes;
  ds.images = images->data;
  ds.labels.reserve(labels->data.size());
  for (float v : labels->data) ds.labels.push_back(static_cast<std::int32_t>(v));
  if (ds.h != m.image_size || ds.w != m.image_size)
    throw DataError("packed dataset image size " + std::to_string(ds.h) +
                    " does not match manifest " + std::to_string(m.image_size));
  ds.validate();
  return ds;
}

}  // namespace

LabeledDataset ingest(const DatasetManifest& manifest, const std::string& split) {
  manifest.validate();
  auto it = manifest.splits.find(split);
  if (it == manifest.splits.end())
    throw ConfigError("manifest has no split '" + split + "'");
  std::vector<std::string> classes = it->second;
  std::sort(classes.begin(), classes.end());  // labels assigned in sorted order
  return manifest.format == "image_folder" ? ingest_image_folder(manifest, split, classes)
                                           : ingest_packed(manifest, split, classes);
}

LabeledDataset merge_meta_training(const std::vector<LabeledDataset>& tasks) {
  if (tasks.empty()) throw DataError("merge: no tasks");
  for (const auto& t : tasks)
    if (t.c != tasks[0].c || t.h != tasks[0].h || t.w != tasks[0].w)
      throw DataError("merge: inconsistent image shapes across tasks");

  std::set<std::string> name_set;
  for (const auto& t : tasks) name_set.insert(t.class_names.begin(), t.class_names.end());
  std::vector<std::string> global(name_set.begin(), name_set.end());  // sorted

  LabeledDataset out;
  out.split = "merged";
  out.c = tasks[0].c;
  out.h = tasks[0].h;
  out.w = tasks[0].w;
  out.class_names = global;
  auto global_index = [&](const std::string& name) {
    return static_cast<std::int32_t>(
        std::lower_bound(global.begin(), global.end(), name) - global.begin());
  };
  for (const auto& t : tasks) {
    out.images.insert(out.images.end(), t.images.begin(), t.images.end());
    for (std::int32_t l : t.labels)
      out.labels.push_back(global_index(t.class_names[static_cast<std::size_t>(l)]));
    out.n += t.n;
  }
  out.validate();
  return out;
}

void write_packed_dataset(const std::filesystem::path& path,
                          const std::map<std::string, LabeledDataset>& splits) {
  TensorSnapshot snap;
  for (const auto& [name, ds] : splits) {
    snap.push_back({name + ".images", Shape{ds.n, ds.c, ds.h, ds.w}, ds.images});
    NamedTensor labels{name + ".labels", Shape{ds.n}, {}};
    for (std::int32_t l : ds.labels) labels.data.push_back(static_cast<float>(l));
    snap.push_back(std::move(labels));
  }
  save_snapshot(path, snap);
}

}  // namespace fsmt
