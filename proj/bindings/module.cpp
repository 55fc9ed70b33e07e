#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fsmt/augment.hpp"
#include "fsmt/checkpoint.hpp"
#include "fsmt/config.hpp"
#include "fsmt/episodic.hpp"
#include "fsmt/op_dispatch.hpp"
#include "fsmt/runner.hpp"
#include "fsmt/toygen.hpp"
#include "fsmt/trainer.hpp"

namespace py = pybind11;
using namespace fsmt;

namespace {

Tensor tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] = a.shape(i);
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

AugmentSpec spec_from_kind(const std::string& kind, std::int64_t crop_size,
                           std::int64_t crop_padding) {
  switch (aug_kind_from_string(kind)) {
    case AugKind::kDefault: return AugmentSpec::defaults(crop_size, crop_padding);
    case AugKind::kHard: return AugmentSpec::hard(crop_size);
    case AugKind::kNone: return AugmentSpec::none(crop_size);
  }
  return AugmentSpec::none(crop_size);
}

py::dict report_to_dict(const EvalReport& r) {
  py::dict d;
  d["mean_accuracy"] = r.mean_accuracy;
  if (r.ci95)
    d["ci95"] = *r.ci95;
  else
    d["ci95"] = py::none();
  d["n_episodes"] = r.n_episodes;
  d["n_way"] = r.n_way;
  d["k_shot"] = r.k_shot;
  d["q_query"] = r.q_query;
  d["seed"] = r.seed;
  d["checkpoint"] = r.checkpoint;
  d["per_episode_accuracies"] = r.per_episode_accuracies;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-task few-shot learning core (supervised + rotation + BYOL)";

  py::register_exception<ConfigError>(m, "FsmtConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "FsmtShapeError", PyExc_ValueError);

  m.def(
      "forward_op",
      [](const std::string& op, const std::vector<py::array_t<float, py::array::c_style |
                                                                         py::array::forcecast>>&
             inputs,
         std::int64_t stride, std::int64_t padding, std::int64_t kernel, std::int64_t axis,
         const std::vector<std::int64_t>& shape, const std::vector<std::int32_t>& labels,
         double scalar) {
        ops::OpAttrs attrs;
        attrs.stride = stride;
        attrs.padding = padding;
        attrs.kernel = kernel;
        attrs.axis = axis;
        attrs.shape = Shape(shape.begin(), shape.end());
        attrs.labels = labels;
        attrs.scalar = scalar;
        std::vector<Tensor> ins;
        ins.reserve(inputs.size());
        for (const auto& a : inputs) ins.push_back(tensor_from_array(a));
        return array_from_tensor(ops::forward_op(ops::op_kind_from_string(op), ins, attrs));
      },
      py::arg("op"), py::arg("inputs"), py::arg("stride") = 1, py::arg("padding") = 0,
      py::arg("kernel") = 2, py::arg("axis") = 0, py::arg("shape") = std::vector<std::int64_t>{},
      py::arg("labels") = std::vector<std::int32_t>{}, py::arg("scalar") = 1.0,
      "Run one tensor op (forward only) on numpy arrays.");

  m.def(
      "rotate90",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& image, int label) {
        return array_from_tensor(rotate90(tensor_from_array(image), label));
      },
      py::arg("image"), py::arg("label"), "Rotate a [C,H,W] image by label*90 degrees.");

  m.def(
      "sample_rotations",
      [](int n, std::uint64_t seed) {
        SplitRng rng(seed);
        std::vector<int> out(static_cast<std::size_t>(n));
        for (auto& l : out) l = sample_rotation(rng);
        return out;
      },
      py::arg("n"), py::arg("seed"), "Uniform rotation labels from a seeded stream.");

  m.def(
      "augment",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
         const std::string& kind, std::uint64_t seed, std::int64_t crop_size,
         std::int64_t crop_padding, bool trace) {
        Tensor img = tensor_from_array(image);
        const std::int64_t size = crop_size > 0 ? crop_size : img.dim(1);
        AugmentSpec spec = spec_from_kind(kind, size, crop_padding);
        SplitRng rng(seed);
        AugTrace tr;
        Tensor out = apply_pipeline(spec, img, rng, trace ? &tr : nullptr);
        return py::make_tuple(array_from_tensor(out), trace ? tr.to_json_line() : std::string());
      },
      py::arg("image"), py::arg("kind") = "default", py::arg("seed") = 0,
      py::arg("crop_size") = 0, py::arg("crop_padding") = 4, py::arg("trace") = false,
      "Apply one augmentation pipeline to a [C,H,W] image in [0,1].");

  m.def(
      "generate_toy_corpus",
      [](const std::string& out_dir, int classes, int per_class, int size, std::uint64_t seed,
         int train, int val, int test, const std::string& style) {
        ToyCorpusSpec spec;
        spec.num_classes = classes;
        spec.per_class = per_class;
        spec.image_size = size;
        spec.seed = seed;
        spec.train_classes = train;
        spec.val_classes = val;
        spec.test_classes = test;
        spec.style = style;
        generate_toy_corpus(spec, out_dir);
        return (std::filesystem::path(out_dir) / "manifest.json").string();
      },
      py::arg("out_dir"), py::arg("classes") = 16, py::arg("per_class") = 40,
      py::arg("size") = 32, py::arg("seed") = 1, py::arg("train") = 8, py::arg("val") = 3,
      py::arg("test") = 5, py::arg("style") = "patterns");

  m.def(
      "ingest",
      [](const std::string& manifest_path, const std::string& split) {
        LabeledDataset ds = ingest(DatasetManifest::load(manifest_path), split);
        py::array_t<float> images({ds.n, ds.c, ds.h, ds.w});
        std::copy(ds.images.begin(), ds.images.end(), images.mutable_data());
        py::array_t<std::int32_t> labels(ds.n);
        std::copy(ds.labels.begin(), ds.labels.end(), labels.mutable_data());
        return py::make_tuple(images, labels, ds.class_names);
      },
      py::arg("manifest"), py::arg("split"));

  m.def(
      "train_run",
      [](const std::string& config_path, const std::map<std::string, std::string>& overrides,
         const std::string& out_dir) {
        RunConfig cfg = RunConfig::from_file(config_path, overrides);
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        RunOutputs out = run_training(cfg);
        py::dict d;
        d["checkpoint"] = out.final_checkpoint.string();
        d["metrics_csv"] = out.metrics_csv.string();
        d["config_snapshot"] = out.config_snapshot.string();
        py::list losses;
        for (const auto& r : out.epochs) losses.append(r.loss_total);
        d["loss_total"] = losses;
        return d;
      },
      py::arg("config"), py::arg("overrides") = std::map<std::string, std::string>{},
      py::arg("out_dir") = "");

  m.def(
      "evaluate_checkpoint",
      [](const std::string& checkpoint, const std::string& manifest_path,
         const std::string& split, int n_way, int k_shot, int q_query, int episodes,
         std::uint64_t seed) {
        MultiTaskModel model = load_checkpoint(checkpoint);
        LabeledDataset data = ingest(DatasetManifest::load(manifest_path), split);
        EpisodeSpec spec;
        spec.n_way = n_way;
        spec.k_shot = k_shot;
        spec.q_query = q_query;
        spec.n_episodes = episodes;
        spec.seed = seed;
        return report_to_dict(evaluate(model, data, spec, checkpoint));
      },
      py::arg("checkpoint"), py::arg("manifest"), py::arg("split") = "test",
      py::arg("n_way") = 5, py::arg("k_shot") = 5, py::arg("q_query") = 15,
      py::arg("episodes") = 250, py::arg("seed") = 0);

  m.def(
      "encode",
      [](const std::string& checkpoint,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& images) {
        MultiTaskModel model = load_checkpoint(checkpoint);
        return array_from_tensor(model.encode(tensor_from_array(images), Mode::kEval));
      },
      py::arg("checkpoint"), py::arg("images"),
      "Frozen-encoder embeddings for a [B,C,H,W] batch.");

  m.def(
      "inspect_checkpoint",
      [](const std::string& path) {
        py::dict d;
        for (const auto& t : load_snapshot(path)) {
          py::list shape;
          for (auto v : t.shape) shape.append(v);
          d[py::str(t.name)] = shape;
        }
        return d;
      },
      py::arg("path"));

  m.attr("__version__") = "0.1.0";
}
