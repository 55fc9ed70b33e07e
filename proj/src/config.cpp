#include "fsmt/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fsmt {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::int64_t to_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const std::int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

// Lookup helper over one section with presence tracking.
struct Section {
  const std::map<std::string, std::string>* kv = nullptr;
  std::string name;

  bool has(const std::string& key) const { return kv && kv->count(key); }
  std::string get(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    return kv->at(key);
  }
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    return to_int(kv->at(key), name + "." + key);
  }
  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return to_double(kv->at(key), name + "." + key);
  }
  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    return to_bool(kv->at(key), name + "." + key);
  }
};

Section section(const ConfigMap& map, const std::string& name) {
  auto it = map.find(name);
  return Section{it == map.end() ? nullptr : &it->second, name};
}

AugmentSpec augment_from_section(const Section& s, AugKind default_kind,
                                 std::int64_t default_crop) {
  const AugKind kind = s.has("kind") ? aug_kind_from_string(s.kv->at("kind")) : default_kind;
  AugmentSpec spec;
  switch (kind) {
    case AugKind::kDefault:
      spec = AugmentSpec::defaults(s.get_int("crop_size", default_crop),
                                   s.get_int("crop_padding", 4));
      break;
    case AugKind::kHard:
      spec = AugmentSpec::hard(s.get_int("crop_size", default_crop));
      break;
    case AugKind::kNone:
      spec = AugmentSpec::none(s.get_int("crop_size", default_crop));
      break;
  }
  spec.jitter.brightness = s.get_double("jitter_brightness", spec.jitter.brightness);
  spec.jitter.contrast = s.get_double("jitter_contrast", spec.jitter.contrast);
  spec.jitter.saturation = s.get_double("jitter_saturation", spec.jitter.saturation);
  spec.jitter.hue = s.get_double("jitter_hue", spec.jitter.hue);
  spec.jitter.p = s.get_double("jitter_p", spec.jitter.p);
  spec.grayscale_p = s.get_double("grayscale_p", spec.grayscale_p);
  spec.hflip_p = s.get_double("hflip_p", spec.hflip_p);
  spec.blur.sigma = s.get_double("blur_sigma", spec.blur.sigma);
  spec.blur.p = s.get_double("blur_p", spec.blur.p);
  spec.resized_crop.scale_min = s.get_double("resized_crop_min", spec.resized_crop.scale_min);
  spec.resized_crop.scale_max = s.get_double("resized_crop_max", spec.resized_crop.scale_max);
  spec.resized_crop.p = s.get_double("resized_crop_p", spec.resized_crop.p);
  spec.validate();
  return spec;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void emit_augment(std::ostringstream& os, const char* section_name, const AugmentSpec& a) {
  os << "[" << section_name << "]\n";
  os << "kind = " << aug_kind_name(a.kind) << "\n";
  os << "crop_size = " << a.crop_size << "\n";
  os << "crop_padding = " << a.crop_padding << "\n";
  os << "jitter_brightness = " << fmt_double(a.jitter.brightness) << "\n";
  os << "jitter_contrast = " << fmt_double(a.jitter.contrast) << "\n";
  os << "jitter_saturation = " << fmt_double(a.jitter.saturation) << "\n";
  os << "jitter_hue = " << fmt_double(a.jitter.hue) << "\n";
  os << "jitter_p = " << fmt_double(a.jitter.p) << "\n";
  os << "grayscale_p = " << fmt_double(a.grayscale_p) << "\n";
  os << "hflip_p = " << fmt_double(a.hflip_p) << "\n";
  os << "blur_sigma = " << fmt_double(a.blur.sigma) << "\n";
  os << "blur_p = " << fmt_double(a.blur.p) << "\n";
  os << "resized_crop_min = " << fmt_double(a.resized_crop.scale_min) << "\n";
  os << "resized_crop_max = " << fmt_double(a.resized_crop.scale_max) << "\n";
  os << "resized_crop_p = " << fmt_double(a.resized_crop.p) << "\n\n";
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream is(text);
  std::string line, current;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section");
      current = trim(line.substr(1, line.size() - 2));
      out[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out[current][key] = value;
  }
  return out;
}

ConfigMap parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

RunConfig RunConfig::from_map(const ConfigMap& map, const std::filesystem::path& base_dir) {
  RunConfig cfg;

  const Section ds = section(map, "dataset");
  for (const auto& m : split_csv(ds.get("manifest", ""))) {
    std::filesystem::path p = m;
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    cfg.manifests.push_back(p);
  }
  cfg.train_split = ds.get("train_split", cfg.train_split);
  cfg.eval_split = ds.get("eval_split", cfg.eval_split);

  const Section enc = section(map, "encoder");
  cfg.encoder.input_channels = enc.get_int("input_channels", cfg.encoder.input_channels);
  cfg.encoder.input_size = enc.get_int("input_size", cfg.encoder.input_size);
  if (enc.has("stage_widths")) {
    cfg.encoder.stage_widths.clear();
    for (const auto& w : split_csv(enc.kv->at("stage_widths")))
      cfg.encoder.stage_widths.push_back(to_int(w, "encoder.stage_widths"));
  }
  const std::string block = enc.get("block_kind", "plain_conv");
  if (block == "plain_conv")
    cfg.encoder.block_kind = BlockKind::kPlainConv;
  else if (block == "residual")
    cfg.encoder.block_kind = BlockKind::kResidual;
  else
    throw ConfigError("encoder.block_kind must be plain_conv or residual, got '" + block + "'");
  cfg.encoder.embedding_dim = enc.get_int("embedding_dim", cfg.encoder.stage_widths.back());

  const Section heads = section(map, "heads");
  cfg.heads.projector_hidden = heads.get_int("projector_hidden", cfg.heads.projector_hidden);
  cfg.heads.projector_dim = heads.get_int("projector_dim", cfg.heads.projector_dim);
  cfg.heads.predictor_hidden = heads.get_int("predictor_hidden", cfg.heads.predictor_hidden);

  const Section tr = section(map, "train");
  cfg.train.epochs = static_cast<int>(tr.get_int("epochs", cfg.train.epochs));
  cfg.train.batch_size = tr.get_int("batch_size", cfg.train.batch_size);
  cfg.train.lr = tr.get_double("lr", cfg.train.lr);
  cfg.train.momentum = tr.get_double("momentum", cfg.train.momentum);
  cfg.train.weight_decay = tr.get_double("weight_decay", cfg.train.weight_decay);
  if (tr.has("decay_epochs")) {
    cfg.train.decay_epochs.clear();
    for (const auto& e : split_csv(tr.kv->at("decay_epochs")))
      cfg.train.decay_epochs.push_back(static_cast<int>(to_int(e, "train.decay_epochs")));
  }
  cfg.train.decay_factor = tr.get_double("decay_factor", cfg.train.decay_factor);
  cfg.train.tau = tr.get_double("tau", cfg.train.tau);
  if (tr.has("tasks")) cfg.train.tasks = task_set_from_string(tr.kv->at("tasks"));
  if (tr.has("view_policy"))
    cfg.train.view_policy = view_policy_from_string(tr.kv->at("view_policy"));
  if (tr.has("sup_augment"))
    cfg.train.sup_augment = aug_kind_from_string(tr.kv->at("sup_augment"));
  cfg.train.seed = static_cast<std::uint64_t>(tr.get_int("seed", 0));
  cfg.train.checkpoint_every =
      static_cast<int>(tr.get_int("checkpoint_every", cfg.train.checkpoint_every));

  const Section lw = section(map, "loss_weights");
  cfg.weights.supervised = lw.get_double("supervised", 1.0);
  cfg.weights.rotation = lw.get_double("rotation", 1.0);
  cfg.weights.byol = lw.get_double("byol", 1.0);

  cfg.byol_symmetric = section(map, "byol").get_bool("symmetric", false);

  const Section ev = section(map, "eval");
  cfg.eval.n_way = static_cast<int>(ev.get_int("n_way", cfg.eval.n_way));
  cfg.eval.k_shot = static_cast<int>(ev.get_int("k_shot", cfg.eval.k_shot));
  cfg.eval.q_query = static_cast<int>(ev.get_int("q_query", cfg.eval.q_query));
  cfg.eval.n_episodes = static_cast<int>(ev.get_int("episodes", cfg.eval.n_episodes));
  cfg.eval.seed = static_cast<std::uint64_t>(ev.get_int("seed", 0));

  cfg.augment_default = augment_from_section(section(map, "augment.default"), AugKind::kDefault,
                                             cfg.encoder.input_size);
  cfg.augment_hard =
      augment_from_section(section(map, "augment.hard"), AugKind::kHard, cfg.encoder.input_size);

  const Section out = section(map, "output");
  if (out.has("dir")) {
    std::filesystem::path p = out.kv->at("dir");
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    cfg.output_dir = p;
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path,
                               const std::map<std::string, std::string>& overrides) {
  ConfigMap map = parse_config_file(path);
  for (const auto& [flat, value] : overrides) {
    const auto dot = flat.rfind('.');
    if (dot == std::string::npos)
      throw ConfigError("override '" + flat + "' must be section.key");
    map[flat.substr(0, dot)][flat.substr(dot + 1)] = value;
  }
  return from_map(map, path.parent_path());
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# fsmt run config v1\n\n[dataset]\n";
  os << "manifest = ";
  for (std::size_t i = 0; i < manifests.size(); ++i)
    os << (i ? "," : "") << manifests[i].string();
  os << "\n";
  os << "train_split = " << train_split << "\n";
  os << "eval_split = " << eval_split << "\n\n";

  os << "[encoder]\n";
  os << "input_channels = " << encoder.input_channels << "\n";
  os << "input_size = " << encoder.input_size << "\n";
  os << "stage_widths = ";
  for (std::size_t i = 0; i < encoder.stage_widths.size(); ++i)
    os << (i ? "," : "") << encoder.stage_widths[i];
  os << "\n";
  os << "block_kind = "
     << (encoder.block_kind == BlockKind::kResidual ? "residual" : "plain_conv") << "\n";
  os << "embedding_dim = " << encoder.embedding_dim << "\n\n";

  os << "[heads]\n";
  os << "projector_hidden = " << heads.projector_hidden << "\n";
  os << "projector_dim = " << heads.projector_dim << "\n";
  os << "predictor_hidden = " << heads.predictor_hidden << "\n\n";

  os << "[train]\n";
  os << "epochs = " << train.epochs << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "lr = " << fmt_double(train.lr) << "\n";
  os << "momentum = " << fmt_double(train.momentum) << "\n";
  os << "weight_decay = " << fmt_double(train.weight_decay) << "\n";
  os << "decay_epochs = ";
  for (std::size_t i = 0; i < train.decay_epochs.size(); ++i)
    os << (i ? "," : "") << train.decay_epochs[i];
  os << "\n";
  os << "decay_factor = " << fmt_double(train.decay_factor) << "\n";
  os << "tau = " << fmt_double(train.tau) << "\n";
  os << "tasks = " << task_set_to_string(train.tasks) << "\n";
  os << "view_policy = " << view_policy_name(train.view_policy) << "\n";
  os << "sup_augment = " << aug_kind_name(train.sup_augment) << "\n";
  os << "seed = " << train.seed << "\n";
  os << "checkpoint_every = " << train.checkpoint_every << "\n\n";

  os << "[loss_weights]\n";
  os << "supervised = " << fmt_double(weights.supervised) << "\n";
  os << "rotation = " << fmt_double(weights.rotation) << "\n";
  os << "byol = " << fmt_double(weights.byol) << "\n\n";

  os << "[byol]\n";
  os << "symmetric = " << (byol_symmetric ? "true" : "false") << "\n\n";

  emit_augment(os, "augment.default", augment_default);
  emit_augment(os, "augment.hard", augment_hard);

  os << "[eval]\n";
  os << "n_way = " << eval.n_way << "\n";
  os << "k_shot = " << eval.k_shot << "\n";
  os << "q_query = " << eval.q_query << "\n";
  os << "episodes = " << eval.n_episodes << "\n";
  os << "seed = " << eval.seed << "\n\n";

  os << "[output]\n";
  os << "dir = " << output_dir.string() << "\n";
  return os.str();
}

void RunConfig::validate() const {
  if (manifests.empty()) throw ConfigError("config: dataset.manifest is required");
  for (const auto& m : manifests)
    if (!std::filesystem::is_regular_file(m))
      throw ConfigError("config: manifest not found: " + m.string());
  encoder.validate();
  heads.validate();
  train.validate();
  augment_default.validate();
  augment_hard.validate();
}

ModelConfig RunConfig::model_config(std::int64_t num_classes) const {
  ModelConfig m;
  m.encoder = encoder;
  m.heads = heads;
  m.num_classes = num_classes;
  m.tau = train.tau;
  m.byol_symmetric = byol_symmetric;
  m.weights = weights;
  m.validate();
  return m;
}

}  // namespace fsmt
