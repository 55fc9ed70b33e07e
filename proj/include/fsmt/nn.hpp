#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fsmt/ops.hpp"
#include "fsmt/rng.hpp"
#include "fsmt/tensor.hpp"

namespace fsmt {

// Forward-pass mode. kTrainFrozenStats normalizes with batch statistics but
// leaves the running buffers untouched (used for the EMA target branch).
enum class Mode { kTrain, kEval, kTrainFrozenStats };

namespace nn {

inline bool use_batch_stats(Mode m) { return m != Mode::kEval; }
inline bool update_running(Mode m) { return m == Mode::kTrain; }

// Kaiming-uniform fan-in init (ReLU gain): U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename T>
void kaiming_uniform_(TensorT<T>& w, std::int64_t fan_in, SplitRng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
struct Conv2dT {
  std::int64_t in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
  TensorT<T> weight;  // [out,in,k,k]
  TensorT<T> bias;    // [out]

  void build(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t s, std::int64_t p,
             SplitRng& rng) {
    in_ch = in;
    out_ch = out;
    ksize = k;
    stride = s;
    pad = p;
    weight = TensorT<T>::zeros({out, in, k, k}, true);
    kaiming_uniform_(weight, in * k * k, rng);
    bias = TensorT<T>::zeros({out}, true);
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    return ops::add(ops::conv2d(x, weight, stride, pad), bias);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", &weight, /*decay=*/true, /*trainable=*/true});
    out.push_back({prefix + ".bias", &bias, false, true});
  }
};

template <typename T>
struct LinearT {
  std::int64_t in_dim = 0, out_dim = 0;
  TensorT<T> weight;  // [in,out] so forward is matmul(x, weight)
  TensorT<T> bias;    // [out]

  void build(std::int64_t in, std::int64_t out, SplitRng& rng) {
    in_dim = in;
    out_dim = out;
    weight = TensorT<T>::zeros({in, out}, true);
    kaiming_uniform_(weight, in, rng);
    bias = TensorT<T>::zeros({out}, true);
  }

  void build_zero(std::int64_t in, std::int64_t out) {
    in_dim = in;
    out_dim = out;
    weight = TensorT<T>::zeros({in, out}, true);
    bias = TensorT<T>::zeros({out}, true);
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    return ops::add(ops::matmul(x, weight), bias);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", &weight, true, true});
    out.push_back({prefix + ".bias", &bias, false, true});
  }
};

template <typename T>
struct BatchNormT {
  std::int64_t features = 0;
  T momentum = T(0.9);
  T eps = T(1e-5);
  TensorT<T> gamma, beta;                  // trainable
  TensorT<T> running_mean, running_var;    // buffers

  void build(std::int64_t n) {
    features = n;
    gamma = TensorT<T>::ones({n}, true);
    beta = TensorT<T>::zeros({n}, true);
    running_mean = TensorT<T>::zeros({n});
    running_var = TensorT<T>::ones({n});
  }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    return ops::batch_norm(x, gamma, beta, running_mean, running_var, use_batch_stats(mode),
                           update_running(mode), momentum, eps);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".gamma", &gamma, false, true});
    out.push_back({prefix + ".beta", &beta, false, true});
    out.push_back({prefix + ".running_mean", &running_mean, false, false});
    out.push_back({prefix + ".running_var", &running_var, false, false});
  }
};

}  // namespace nn

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

enum class BlockKind { kPlainConv, kResidual };

// Four-(or-n-)stage convolutional encoder; each stage is a conv block
// followed by 2x2 max pooling, with global average pooling into the
// embedding at the end.
struct EncoderConfig {
  std::int64_t input_channels = 3;
  std::int64_t input_size = 32;
  std::vector<std::int64_t> stage_widths = {32, 64, 128, 256};
  BlockKind block_kind = BlockKind::kPlainConv;
  std::int64_t embedding_dim = 256;

  void validate() const {
    if (stage_widths.empty()) throw ConfigError("encoder: stage_widths must be nonempty");
    if (embedding_dim <= 0) throw ConfigError("encoder: embedding_dim must be positive");
    if (embedding_dim != stage_widths.back())
      throw ConfigError("encoder: embedding_dim " + std::to_string(embedding_dim) +
                        " must equal the last stage width " +
                        std::to_string(stage_widths.back()) +
                        " (global average pooling defines the embedding)");
    if (input_channels <= 0 || input_size <= 0)
      throw ConfigError("encoder: input_channels and input_size must be positive");
    if (input_size < (std::int64_t(1) << stage_widths.size()))
      throw ConfigError("encoder: input_size " + std::to_string(input_size) +
                        " too small for " + std::to_string(stage_widths.size()) +
                        " pooling stages");
  }

  std::int64_t parameter_count() const {
    std::int64_t total = 0;
    std::int64_t in = input_channels;
    for (std::int64_t out : stage_widths) {
      total += in * out * 9 + out + 2 * out;  // conv1 + bias + bn1
      if (block_kind == BlockKind::kResidual) {
        total += out * out * 9 + out + 2 * out;  // conv2 + bias + bn2
        if (in != out) total += in * out + out + 2 * out;  // 1x1 projection + bn
      }
      in = out;
    }
    return total;
  }
};

template <typename T>
class EncoderT {
 public:
  EncoderT() = default;

  EncoderT(const EncoderConfig& cfg, SplitRng rng) : cfg_(cfg) {
    cfg_.validate();
    std::int64_t in = cfg_.input_channels;
    for (std::int64_t out : cfg_.stage_widths) {
      Stage st;
      st.conv1.build(in, out, 3, 1, 1, rng);
      st.bn1.build(out);
      if (cfg_.block_kind == BlockKind::kResidual) {
        st.conv2.emplace();
        st.conv2->build(out, out, 3, 1, 1, rng);
        st.bn2.emplace();
        st.bn2->build(out);
        if (in != out) {
          st.proj.emplace();
          st.proj->build(in, out, 1, 1, 0, rng);
          st.proj_bn.emplace();
          st.proj_bn->build(out);
        }
      }
      stages_.push_back(std::move(st));
      in = out;
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    if (x.rank() != 4 || x.dim(1) != cfg_.input_channels || x.dim(2) != cfg_.input_size ||
        x.dim(3) != cfg_.input_size) {
      throw ShapeError("encode: expected [B," + std::to_string(cfg_.input_channels) + "," +
                       std::to_string(cfg_.input_size) + "," + std::to_string(cfg_.input_size) +
                       "], got " + shape_str(x.shape()));
    }
    TensorT<T> h = x;
    for (auto& st : stages_) {
      h = st.forward(h, mode, cfg_.block_kind);
      h = ops::max_pool2d(h, 2, 2);
    }
    h = ops::avg_pool2d(h, h.dim(2), 1);  // global average pool (square by construction)
    return ops::reshape(h, Shape{h.dim(0), h.dim(1)});
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const std::string p = prefix + ".stage" + std::to_string(i + 1);
      stages_[i].conv1.collect(p + ".conv1", out);
      stages_[i].bn1.collect(p + ".bn1", out);
      if (stages_[i].conv2) {
        stages_[i].conv2->collect(p + ".conv2", out);
        stages_[i].bn2->collect(p + ".bn2", out);
      }
      if (stages_[i].proj) {
        stages_[i].proj->collect(p + ".proj", out);
        stages_[i].proj_bn->collect(p + ".proj_bn", out);
      }
    }
  }

 private:
  struct Stage {
    nn::Conv2dT<T> conv1;
    nn::BatchNormT<T> bn1;
    std::optional<nn::Conv2dT<T>> conv2;
    std::optional<nn::BatchNormT<T>> bn2;
    std::optional<nn::Conv2dT<T>> proj;
    std::optional<nn::BatchNormT<T>> proj_bn;

    TensorT<T> forward(const TensorT<T>& x, Mode mode, BlockKind kind) {
      TensorT<T> h = ops::relu(bn1.forward(conv1.forward(x), mode));
      if (kind == BlockKind::kPlainConv) return h;
      h = bn2->forward(conv2->forward(h), mode);
      TensorT<T> shortcut = x;
      if (proj) shortcut = proj_bn->forward(proj->forward(x), mode);
      return ops::relu(ops::add(h, shortcut));
    }
  };

  EncoderConfig cfg_;
  std::vector<Stage> stages_;
};

// ---------------------------------------------------------------------------
// MLP heads
// ---------------------------------------------------------------------------

struct MlpLayerSpec {
  std::int64_t in = 0;
  std::int64_t out = 0;
  bool batch_norm = false;
  bool relu = false;
};

// Uniform MLP: every hidden linear gets (batch norm if hidden_norm) + ReLU,
// the final linear is bare.
struct MlpConfig {
  std::vector<std::pair<std::int64_t, std::int64_t>> layer_dims;
  bool hidden_norm = true;

  void validate() const {
    if (layer_dims.empty()) throw ConfigError("mlp: no layers");
    for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i)
      if (layer_dims[i].second != layer_dims[i + 1].first)
        throw ConfigError("mlp: layer dims do not chain at layer " + std::to_string(i + 1));
  }

  std::vector<MlpLayerSpec> layers() const {
    validate();
    std::vector<MlpLayerSpec> out;
    for (std::size_t i = 0; i < layer_dims.size(); ++i) {
      const bool hidden = i + 1 < layer_dims.size();
      out.push_back({layer_dims[i].first, layer_dims[i].second, hidden && hidden_norm, hidden});
    }
    return out;
  }
};

// Rotation head: linear(E->E) + BN + ReLU, linear(E->E), linear(E->4).
inline std::vector<MlpLayerSpec> rotation_head_layers(std::int64_t embedding_dim) {
  return {{embedding_dim, embedding_dim, true, true},
          {embedding_dim, embedding_dim, false, false},
          {embedding_dim, 4, false, false}};
}

template <typename T>
class MlpT {
 public:
  MlpT() = default;

  MlpT(std::vector<MlpLayerSpec> specs, SplitRng rng) : specs_(std::move(specs)) {
    for (const auto& s : specs_) {
      Layer l;
      l.linear.build(s.in, s.out, rng);
      if (s.batch_norm) {
        l.bn.emplace();
        l.bn->build(s.out);
      }
      layers_.push_back(std::move(l));
    }
  }

  std::int64_t in_dim() const { return specs_.front().in; }
  std::int64_t out_dim() const { return specs_.back().out; }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    if (x.rank() != 2 || x.dim(1) != in_dim())
      throw ShapeError("mlp_forward: expected [B," + std::to_string(in_dim()) + "], got " +
                       shape_str(x.shape()));
    TensorT<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].linear.forward(h);
      if (layers_[i].bn) h = layers_[i].bn->forward(h, mode);
      if (specs_[i].relu) h = ops::relu(h);
    }
    return h;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string p = prefix + ".layer" + std::to_string(i + 1);
      layers_[i].linear.collect(p, out);
      if (layers_[i].bn) layers_[i].bn->collect(p + ".bn", out);
    }
  }

 private:
  struct Layer {
    nn::LinearT<T> linear;
    std::optional<nn::BatchNormT<T>> bn;
  };
  std::vector<MlpLayerSpec> specs_;
  std::vector<Layer> layers_;
};

using Encoder = EncoderT<float>;
using Mlp = MlpT<float>;

}  // namespace fsmt
