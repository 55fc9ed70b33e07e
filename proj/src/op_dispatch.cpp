#include "fsmt/op_dispatch.hpp"

#include <unordered_map>

namespace fsmt::ops {

OpKind op_kind_from_string(const std::string& name) {
  static const std::unordered_map<std::string, OpKind> kMap = {
      {"matmul", OpKind::kMatmul},
      {"conv2d", OpKind::kConv2d},
      {"add", OpKind::kAdd},
      {"mul", OpKind::kMul},
      {"relu", OpKind::kRelu},
      {"max_pool2d", OpKind::kMaxPool2d},
      {"avg_pool2d", OpKind::kAvgPool2d},
      {"batch_norm", OpKind::kBatchNorm},
      {"softmax_cross_entropy", OpKind::kSoftmaxCrossEntropy},
      {"l2_normalize", OpKind::kL2Normalize},
      {"mse", OpKind::kMse},
      {"reshape", OpKind::kReshape},
      {"concat", OpKind::kConcat},
      {"mean", OpKind::kMean},
      {"sum", OpKind::kSum},
  };
  auto it = kMap.find(name);
  if (it == kMap.end()) throw Error("unknown op '" + name + "'");
  return it->second;
}

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kRelu: return "relu";
    case OpKind::kMaxPool2d: return "max_pool2d";
    case OpKind::kAvgPool2d: return "avg_pool2d";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kL2Normalize: return "l2_normalize";
    case OpKind::kMse: return "mse";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
  }
  return "?";
}

}  // namespace fsmt::ops
