#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsmt/ops.hpp"

namespace fsmt::ops {

enum class OpKind {
  kMatmul,
  kConv2d,
  kAdd,
  kMul,
  kRelu,
  kMaxPool2d,
  kAvgPool2d,
  kBatchNorm,
  kSoftmaxCrossEntropy,
  kL2Normalize,
  kMse,
  kReshape,
  kConcat,
  kMean,
  kSum,
};

// Attribute bag for the generic dispatcher. Ops read only the fields they
// document; unused fields are ignored.
struct OpAttrs {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t kernel = 2;
  std::int64_t axis = 0;
  Shape shape;
  std::vector<std::int32_t> labels;
  double scalar = 1.0;
  bool use_batch_stats = true;
  bool update_running = true;
  bool strict = false;
  double momentum = 0.9;
  double eps = 1e-5;
};

OpKind op_kind_from_string(const std::string& name);
const char* op_kind_name(OpKind kind);

// Uniform entry point over every tensor operation. `mul` with a single input
// multiplies by attrs.scalar. `batch_norm` takes
// (x, gamma, beta, running_mean, running_var) and mutates the running
// buffers in place when updating.
template <typename T>
TensorT<T> forward_op(OpKind kind, std::vector<TensorT<T>> inputs, const OpAttrs& attrs = {}) {
  auto want = [&](std::size_t n) {
    if (inputs.size() != n)
      throw ShapeError(std::string(op_kind_name(kind)) + ": expects " + std::to_string(n) +
                       " inputs, got " + std::to_string(inputs.size()));
  };
  switch (kind) {
    case OpKind::kMatmul:
      want(2);
      return matmul(inputs[0], inputs[1]);
    case OpKind::kConv2d:
      want(2);
      return conv2d(inputs[0], inputs[1], attrs.stride, attrs.padding);
    case OpKind::kAdd:
      want(2);
      return add(inputs[0], inputs[1]);
    case OpKind::kMul:
      if (inputs.size() == 1) return scale(inputs[0], static_cast<T>(attrs.scalar));
      want(2);
      return mul(inputs[0], inputs[1]);
    case OpKind::kRelu:
      want(1);
      return relu(inputs[0]);
    case OpKind::kMaxPool2d:
      want(1);
      return max_pool2d(inputs[0], attrs.kernel, attrs.stride);
    case OpKind::kAvgPool2d:
      want(1);
      return avg_pool2d(inputs[0], attrs.kernel, attrs.stride);
    case OpKind::kBatchNorm:
      want(5);
      return batch_norm(inputs[0], inputs[1], inputs[2], inputs[3], inputs[4],
                        attrs.use_batch_stats, attrs.update_running,
                        static_cast<T>(attrs.momentum), static_cast<T>(attrs.eps));
    case OpKind::kSoftmaxCrossEntropy:
      want(1);
      return softmax_cross_entropy(inputs[0], attrs.labels);
    case OpKind::kL2Normalize:
      want(1);
      return l2_normalize(inputs[0], attrs.axis, attrs.strict);
    case OpKind::kMse:
      want(2);
      return mse(inputs[0], inputs[1]);
    case OpKind::kReshape:
      want(1);
      return reshape(inputs[0], attrs.shape);
    case OpKind::kConcat:
      return concat(inputs, attrs.axis);
    case OpKind::kMean:
      want(1);
      return mean(inputs[0]);
    case OpKind::kSum:
      want(1);
      return sum(inputs[0]);
  }
  throw Error("forward_op: unknown op kind");
}

}  // namespace fsmt::ops
