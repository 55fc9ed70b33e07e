#include "fsmt/model.hpp"

#include <sstream>

namespace fsmt {

ViewPolicy view_policy_from_string(const std::string& s) {
  if (s == "separate_views" || s == "separate") return ViewPolicy::kSeparateViews;
  if (s == "shared_views" || s == "shared") return ViewPolicy::kSharedViews;
  if (s == "two_view_supervised" || s == "two_view") return ViewPolicy::kTwoViewSupervised;
  throw ConfigError("unknown view policy '" + s +
                    "' (separate_views|shared_views|two_view_supervised)");
}

const char* view_policy_name(ViewPolicy p) {
  switch (p) {
    case ViewPolicy::kSeparateViews: return "separate_views";
    case ViewPolicy::kSharedViews: return "shared_views";
    case ViewPolicy::kTwoViewSupervised: return "two_view_supervised";
  }
  return "?";
}

TaskSet task_set_from_string(const std::string& csv) {
  TaskSet out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "sup" || item == "supervised")
      out.supervised = true;
    else if (item == "rot" || item == "rotation")
      out.rotation = true;
    else if (item == "byol")
      out.byol = true;
    else
      throw ConfigError("unknown task '" + item + "' (sup|rot|byol)");
  }
  if (!out.any()) throw ConfigError("task set '" + csv + "' selects no tasks");
  return out;
}

std::string task_set_to_string(const TaskSet& t) {
  std::string s;
  auto app = [&](const char* name) {
    if (!s.empty()) s += ",";
    s += name;
  };
  if (t.supervised) app("sup");
  if (t.rotation) app("rot");
  if (t.byol) app("byol");
  return s;
}

const AugmentSpec& AugmentPlan::spec_for(AugKind kind) const {
  static const AugmentSpec kIdentity = [] {
    AugmentSpec s;
    s.kind = AugKind::kNone;
    return s;
  }();
  switch (kind) {
    case AugKind::kDefault: return default_spec;
    case AugKind::kHard: return hard_spec;
    case AugKind::kNone: return kIdentity;
  }
  return kIdentity;
}

namespace model_detail {

Tensor augment_batch(const AugmentSpec& spec, const Tensor& images,
                     const std::vector<std::int64_t>& item_ids, const SplitRng& scope,
                     std::uint64_t stream_tag) {
  const std::int64_t B = images.dim(0), C = images.dim(1);
  const std::int64_t chw = images.numel() / B;
  std::vector<float> out;
  Shape out_shape;
  for (std::int64_t b = 0; b < B; ++b) {
    Tensor img({C, images.dim(2), images.dim(3)},
               std::vector<float>(images.data().begin() + b * chw,
                                  images.data().begin() + (b + 1) * chw));
    SplitRng rng = scope.fork(stream_tag, static_cast<std::uint64_t>(item_ids[b]));
    Tensor aug = apply_pipeline(spec, img, rng);
    if (b == 0) {
      out_shape = {B, aug.dim(0), aug.dim(1), aug.dim(2)};
      out.reserve(static_cast<std::size_t>(B * aug.numel()));
    }
    out.insert(out.end(), aug.data().begin(), aug.data().end());
  }
  return Tensor(std::move(out_shape), std::move(out));
}

std::vector<int> sample_rotation_labels(const std::vector<std::int64_t>& item_ids,
                                        const SplitRng& scope) {
  std::vector<int> labels(item_ids.size());
  for (std::size_t i = 0; i < item_ids.size(); ++i) {
    SplitRng rng = scope.fork(rng_stream::kRotLabel, static_cast<std::uint64_t>(item_ids[i]));
    labels[i] = sample_rotation(rng);
  }
  return labels;
}

}  // namespace model_detail

}  // namespace fsmt
