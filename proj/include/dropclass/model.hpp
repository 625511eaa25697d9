#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dropclass/graph.hpp"
#include "dropclass/keyvalue.hpp"
#include "dropclass/tensor.hpp"

namespace dropclass {

struct ModelConfig {
  std::vector<Index> widths{16, 32, 32};
  Index kernel_size = 3;
  Index feature_channels = 32;  // k; must equal widths.back()
  Index num_classes = 6;
  Index compensation_kernel = 1;
  Index input_channels = 3;
  std::uint64_t init_seed = 0;

  void validate() const;

  KeyValues to_keyvalues() const;
  static ModelConfig from_keyvalues(const KeyValues& kv);

  bool operator==(const ModelConfig&) const = default;
};

template <typename Scalar>
struct ConvParams {
  BasicTensor<Scalar> kernel;  // [kh, kw, cin, cout]
  BasicTensor<Scalar> bias;    // [cout]

  bool operator==(const ConvParams&) const = default;
};

/// Feature extractor g (conv + ReLU stack), 1x1 classifier h and the
/// compensation conv of the drop branch.
template <typename Scalar>
struct BasicModel {
  using TensorT = BasicTensor<Scalar>;

  ModelConfig config;
  std::vector<ConvParams<Scalar>> extractor;
  ConvParams<Scalar> classifier;
  ConvParams<Scalar> compensation;

  /// Parameters in checkpoint order: extractor layers (kernel, bias), then
  /// classifier, then compensation.
  std::vector<TensorT*> parameters() {
    std::vector<TensorT*> out;
    for (auto& layer : extractor) {
      out.push_back(&layer.kernel);
      out.push_back(&layer.bias);
    }
    for (auto* p : {&classifier, &compensation}) {
      out.push_back(&p->kernel);
      out.push_back(&p->bias);
    }
    return out;
  }

  std::vector<const TensorT*> parameters() const {
    auto mut = const_cast<BasicModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < extractor.size(); ++i) {
      names.push_back("extractor." + std::to_string(i) + ".kernel");
      names.push_back("extractor." + std::to_string(i) + ".bias");
    }
    for (const char* p : {"classifier", "compensation"}) {
      names.push_back(std::string(p) + ".kernel");
      names.push_back(std::string(p) + ".bias");
    }
    return names;
  }

  /// Classifier weight W_{c,k}, stored at kernel[0, 0, k, c].
  Scalar class_weight(Index c, Index k) const { return classifier.kernel[k * config.num_classes + c]; }

  template <typename Other>
  BasicModel<Other> cast() const {
    BasicModel<Other> out;
    out.config = config;
    for (const auto& layer : extractor) {
      out.extractor.push_back({layer.kernel.template cast<Other>(), layer.bias.template cast<Other>()});
    }
    out.classifier = {classifier.kernel.template cast<Other>(), classifier.bias.template cast<Other>()};
    out.compensation = {compensation.kernel.template cast<Other>(), compensation.bias.template cast<Other>()};
    return out;
  }

  bool operator==(const BasicModel&) const = default;
};

using Model = BasicModel<float>;
using ModelD = BasicModel<double>;

/// Kaiming fan-in normal weights (std sqrt(2 / fan_in)), zero biases.
Model init_model(const ModelConfig& config, std::uint64_t seed);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
/// Rejects checkpoints whose class count differs from `expected_classes`.
Model load_checkpoint(const std::filesystem::path& path, Index expected_classes);

std::string serialize_checkpoint(const Model& model);
Model parse_checkpoint(const std::string& bytes);

// Graph-level model ----------------------------------------------------------

struct ConvNodes {
  NodeId kernel;
  NodeId bias;
};

struct BoundModel {
  std::vector<ConvNodes> extractor;
  ConvNodes classifier;
  ConvNodes compensation;

  std::vector<NodeId> parameters() const {
    std::vector<NodeId> out;
    for (const auto& l : extractor) {
      out.push_back(l.kernel);
      out.push_back(l.bias);
    }
    for (const auto* p : {&classifier, &compensation}) {
      out.push_back(p->kernel);
      out.push_back(p->bias);
    }
    return out;
  }
};

/// Records the model's parameters as graph leaves; variables when trainable.
template <typename Scalar>
BoundModel bind_model(BasicGraph<Scalar>& graph, const BasicModel<Scalar>& model, bool trainable = true) {
  auto leaf = [&](const BasicTensor<Scalar>& t) { return trainable ? graph.variable(t) : graph.input(t); };
  BoundModel bound;
  for (const auto& layer : model.extractor) bound.extractor.push_back({leaf(layer.kernel), leaf(layer.bias)});
  bound.classifier = {leaf(model.classifier.kernel), leaf(model.classifier.bias)};
  bound.compensation = {leaf(model.compensation.kernel), leaf(model.compensation.bias)};
  return bound;
}

/// A = g(x): same-padded conv layers, each followed by ReLU.
template <typename Scalar>
NodeId extract_features(BasicGraph<Scalar>& graph, const BoundModel& model, NodeId x) {
  NodeId h = x;
  for (const auto& layer : model.extractor) {
    h = graph.relu(graph.conv2d(h, layer.kernel, layer.bias, Padding::same));
  }
  return h;
}

/// y_hat = h(A), the 1x1 classifier producing per-pixel logits.
template <typename Scalar>
NodeId classify(BasicGraph<Scalar>& graph, const BoundModel& model, NodeId features) {
  return graph.conv2d(features, model.classifier.kernel, model.classifier.bias, Padding::same);
}

template <typename Scalar>
NodeId compensate(BasicGraph<Scalar>& graph, const BoundModel& model, NodeId features) {
  return graph.conv2d(features, model.compensation.kernel, model.compensation.bias, Padding::same);
}

// Tensor-level model ---------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> extract_features(const BasicModel<Scalar>& model, const BasicTensor<Scalar>& x) {
  if (x.rank() != 3 || x.channels() != model.config.input_channels) {
    throw DimensionError("model", "input must be [h,w," + std::to_string(model.config.input_channels) + "], got " +
                                      to_string(x.shape()));
  }
  BasicTensor<Scalar> h = x;
  for (const auto& layer : model.extractor) h = relu(conv2d(h, layer.kernel, layer.bias, Padding::same));
  return h;
}

template <typename Scalar>
BasicTensor<Scalar> classify(const BasicModel<Scalar>& model, const BasicTensor<Scalar>& features) {
  if (features.rank() != 3 || features.channels() != model.config.feature_channels) {
    throw DimensionError("model", "classifier expects " + std::to_string(model.config.feature_channels) +
                                      " feature channels, got " + to_string(features.shape()));
  }
  return conv2d(features, model.classifier.kernel, model.classifier.bias, Padding::same);
}

template <typename Scalar>
struct ForwardResult {
  BasicTensor<Scalar> features;
  BasicTensor<Scalar> logits;
};

template <typename Scalar>
ForwardResult<Scalar> forward(const BasicModel<Scalar>& model, const BasicTensor<Scalar>& x) {
  auto a = extract_features(model, x);
  auto y = classify(model, a);
  return {std::move(a), std::move(y)};
}

}  // namespace dropclass
