#include "fsmt/episodic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fsmt/ops.hpp"
#include "json.hpp"

namespace fsmt {

void EpisodeSpec::validate(const LabeledDataset& data) const {
  if (n_way < 2) throw ConfigError("episode: n_way must be >= 2");
  if (k_shot < 1 || q_query < 1) throw ConfigError("episode: k_shot and q_query must be >= 1");
  if (n_episodes < 1) throw ConfigError("episode: n_episodes must be >= 1");
  if (n_way > data.num_classes())
    throw ConfigError("episode: n_way " + std::to_string(n_way) + " exceeds the " +
                      std::to_string(data.num_classes()) + " held-out classes");
}

namespace {

Episode sample_episode_from(const std::vector<std::vector<std::int64_t>>& by_class,
                            const EpisodeSpec& spec, SplitRng& rng) {
  const std::int64_t num_classes = static_cast<std::int64_t>(by_class.size());
  // Partial Fisher-Yates over the class ids: first n_way entries.
  std::vector<std::int32_t> class_ids(static_cast<std::size_t>(num_classes));
  for (std::int64_t i = 0; i < num_classes; ++i)
    class_ids[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
  for (int i = 0; i < spec.n_way; ++i) {
    const auto j =
        i + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(num_classes - i)));
    std::swap(class_ids[static_cast<std::size_t>(i)], class_ids[static_cast<std::size_t>(j)]);
  }

  Episode ep;
  const int need = spec.k_shot + spec.q_query;
  for (int way = 0; way < spec.n_way; ++way) {
    const std::int32_t cls = class_ids[static_cast<std::size_t>(way)];
    ep.class_map.push_back(cls);
    std::vector<std::int64_t> pool = by_class[static_cast<std::size_t>(cls)];
    if (static_cast<int>(pool.size()) < need)
      throw DataError("episode: class " + std::to_string(cls) + " has " +
                      std::to_string(pool.size()) + " examples, needs " + std::to_string(need));
    for (int i = 0; i < need; ++i) {
      const auto j = i + static_cast<std::int64_t>(
                             rng.uniform_int(static_cast<std::uint64_t>(pool.size() - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    for (int i = 0; i < spec.k_shot; ++i) {
      ep.support_indices.push_back(pool[static_cast<std::size_t>(i)]);
      ep.support_labels.push_back(static_cast<std::int32_t>(way));
    }
    for (int i = spec.k_shot; i < need; ++i) {
      ep.query_indices.push_back(pool[static_cast<std::size_t>(i)]);
      ep.query_labels.push_back(static_cast<std::int32_t>(way));
    }
  }
  return ep;
}

Tensor gather_rows(const Tensor& matrix, const std::vector<std::int64_t>& rows) {
  const std::int64_t d = matrix.dim(1);
  std::vector<float> out;
  out.reserve(rows.size() * static_cast<std::size_t>(d));
  for (std::int64_t r : rows)
    out.insert(out.end(), matrix.data().begin() + r * d, matrix.data().begin() + (r + 1) * d);
  return Tensor({static_cast<std::int64_t>(rows.size()), d}, std::move(out));
}

}  // namespace

Episode sample_episode(const LabeledDataset& data, const EpisodeSpec& spec, SplitRng& rng) {
  spec.validate(data);
  return sample_episode_from(data.indices_by_class(), spec, rng);
}

BaseLearnerFit fit_base_learner(const Tensor& support_embeddings,
                                const std::vector<std::int32_t>& support_labels, int n_way,
                                const BaseLearnerOptions& opts) {
  const std::int64_t d = support_embeddings.dim(1);
  BaseLearnerFit fit;
  fit.classifier.build_zero(d, n_way);
  fit.classifier.weight.set_requires_grad(true);
  fit.classifier.bias.set_requires_grad(true);

  std::vector<float> vw(static_cast<std::size_t>(fit.classifier.weight.numel()), 0.0f);
  std::vector<float> vb(static_cast<std::size_t>(n_way), 0.0f);
  const float m = static_cast<float>(opts.momentum);
  const float lr = static_cast<float>(opts.lr);
  const float wd = static_cast<float>(opts.weight_decay);

  Tensor emb(support_embeddings.shape(), support_embeddings.data());  // detached copy
  for (int step = 0; step < opts.max_steps; ++step) {
    Tensor loss = ops::softmax_cross_entropy(fit.classifier.forward(emb), support_labels);
    fit.final_loss = static_cast<double>(loss.item());
    if (fit.final_loss < opts.loss_threshold) return fit;
    loss.backward();
    auto& w = fit.classifier.weight.data();
    const auto& gw = fit.classifier.weight.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      vw[j] = m * vw[j] + (gw[j] + wd * w[j]);
      w[j] -= lr * vw[j];
    }
    auto& b = fit.classifier.bias.data();
    const auto& gb = fit.classifier.bias.grad();
    for (std::size_t j = 0; j < b.size(); ++j) {
      vb[j] = m * vb[j] + gb[j];  // biases take no weight decay
      b[j] -= lr * vb[j];
    }
    fit.classifier.weight.zero_grad();
    fit.classifier.bias.zero_grad();
    fit.steps_run = step + 1;
  }
  Tensor loss = ops::softmax_cross_entropy(fit.classifier.forward(emb), support_labels);
  fit.final_loss = static_cast<double>(loss.item());
  return fit;
}

double classifier_accuracy(BaseLearnerFit& fit, const Tensor& embeddings,
                           const std::vector<std::int32_t>& labels) {
  Tensor logits = fit.classifier.forward(embeddings);
  const std::int64_t B = logits.dim(0), C = logits.dim(1);
  std::int64_t correct = 0;
  for (std::int64_t b = 0; b < B; ++b) {
    const float* row = logits.data().data() + b * C;
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < C; ++c)
      if (row[c] > row[best]) best = c;
    if (best == labels[static_cast<std::size_t>(b)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(B);
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

std::optional<double> ci95_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return std::nullopt;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["mean_accuracy"] = mean_accuracy;
  if (ci95)
    j["ci95"] = *ci95;
  else
    j["ci95_undefined"] = true;
  j["n_episodes"] = n_episodes;
  j["n_way"] = n_way;
  j["k_shot"] = k_shot;
  j["q_query"] = q_query;
  j["seed"] = seed;
  j["checkpoint"] = checkpoint;
  j["per_episode_accuracies"] = per_episode_accuracies;
  return j.dump(2);
}

void EvalReport::write_json(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write report " + path.string());
  os << to_json() << "\n";
}

void EvalReport::write_episode_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write episode csv " + path.string());
  os << "# fsmt episodes v1\nepisode,accuracy\n";
  char buf[64];
  for (std::size_t i = 0; i < per_episode_accuracies.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, per_episode_accuracies[i]);
    os << buf;
  }
}

Tensor extract_embeddings(MultiTaskModel& model, const LabeledDataset& data,
                          std::int64_t batch_size) {
  std::vector<float> out;
  std::int64_t dim = 0;
  for (std::int64_t lo = 0; lo < data.n; lo += batch_size) {
    const std::int64_t hi = std::min(lo + batch_size, data.n);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(hi - lo));
    for (std::int64_t i = lo; i < hi; ++i) idx[static_cast<std::size_t>(i - lo)] = i;
    Tensor emb = model.encode(data.gather_images(idx), Mode::kEval);
    dim = emb.dim(1);
    out.insert(out.end(), emb.data().begin(), emb.data().end());
  }
  return Tensor({data.n, dim}, std::move(out));
}

EvalReport evaluate(MultiTaskModel& model, const LabeledDataset& data, const EpisodeSpec& spec,
                    const std::string& checkpoint_id) {
  spec.validate(data);
  Tensor embeddings = extract_embeddings(model, data);  // encoder frozen: eval mode only
  const auto by_class = data.indices_by_class();
  const SplitRng root(spec.seed);

  EvalReport report;
  report.n_episodes = spec.n_episodes;
  report.n_way = spec.n_way;
  report.k_shot = spec.k_shot;
  report.q_query = spec.q_query;
  report.seed = spec.seed;
  report.checkpoint = checkpoint_id;
  report.per_episode_accuracies.reserve(static_cast<std::size_t>(spec.n_episodes));
  for (int e = 0; e < spec.n_episodes; ++e) {
    SplitRng rng = root.fork(rng_stream::kEpisode, static_cast<std::uint64_t>(e));
    Episode ep = sample_episode_from(by_class, spec, rng);
    BaseLearnerFit fit = fit_base_learner(gather_rows(embeddings, ep.support_indices),
                                          ep.support_labels, spec.n_way);
    const double acc =
        classifier_accuracy(fit, gather_rows(embeddings, ep.query_indices), ep.query_labels);
    report.per_episode_accuracies.push_back(acc * 100.0);
  }
  report.mean_accuracy = mean_of(report.per_episode_accuracies);
  report.ci95 = ci95_of(report.per_episode_accuracies);
  return report;
}

MultiRunReport evaluate_runs(MultiTaskModel& model, const LabeledDataset& data,
                             const EpisodeSpec& spec, int runs,
                             const std::string& checkpoint_id) {
  if (runs < 1) throw ConfigError("evaluate: runs must be >= 1");
  MultiRunReport out;
  std::vector<double> run_means;
  for (int r = 0; r < runs; ++r) {
    EpisodeSpec run_spec = spec;
    run_spec.seed = SplitRng::mix(spec.seed, 0x52554e00ULL + static_cast<std::uint64_t>(r));
    out.runs.push_back(evaluate(model, data, run_spec, checkpoint_id));
    run_means.push_back(out.runs.back().mean_accuracy);
  }
  out.mean_accuracy = mean_of(run_means);
  out.ci95 = ci95_of(run_means);
  return out;
}

}  // namespace fsmt
