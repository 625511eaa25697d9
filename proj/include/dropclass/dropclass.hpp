#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dropclass/graph.hpp"
#include "dropclass/label_map.hpp"
#include "dropclass/model.hpp"
#include "dropclass/tensor.hpp"

namespace dropclass {

// Schedules -----------------------------------------------------------------

/// Loss balance lambda and drop probability at iteration t of T. Both ramp
/// linearly from 0 at t = 0 to 1 at t = T.
struct Schedule {
  double lambda = 0.0;
  double drop_probability = 0.0;
};

Schedule schedule_at(Index t, Index total);

using Rng = std::mt19937_64;

/// With probability p, a class drawn uniformly from {0, ..., num_classes-1};
/// otherwise no class.
std::optional<int> sample_drop(Rng& rng, Index num_classes, double p);

// Importance maps and class-specific features ----------------------------------

/// S^c for a 1x1 classifier: the spatial average of d y_hat[u,v,c] / d A[i,j,k]
/// collapses to W[c,k] / (h*w), independent of (i, j).
template <typename Scalar>
BasicTensor<Scalar> importance_map(const BasicModel<Scalar>& model, Index height, Index width, Index c) {
  if (c < 0 || c >= model.config.num_classes) {
    throw ContractError("dropclass", "importance_map: class " + std::to_string(c) + " out of range");
  }
  const Index k = model.config.feature_channels;
  BasicTensor<Scalar> s(Shape{height, width, k});
  const Scalar inv = Scalar(1) / Scalar(height * width);
  auto row = s.pixels();
  for (Index ch = 0; ch < k; ++ch) row.col(ch).setConstant(model.class_weight(c, ch) * inv);
  return s;
}

template <typename Scalar>
std::vector<BasicTensor<Scalar>> importance_maps(const BasicModel<Scalar>& model, Index height, Index width) {
  std::vector<BasicTensor<Scalar>> maps;
  for (Index c = 0; c < model.config.num_classes; ++c) maps.push_back(importance_map(model, height, width, c));
  return maps;
}

/// Same quantity through a reverse sweep over the recorded classifier graph;
/// valid for any classifier, used to cross-check the shortcut above.
template <typename Scalar>
BasicTensor<Scalar> importance_map_autodiff(const BasicModel<Scalar>& model, const BasicTensor<Scalar>& features,
                                            Index c) {
  if (c < 0 || c >= model.config.num_classes) {
    throw ContractError("dropclass", "importance_map: class " + std::to_string(c) + " out of range");
  }
  BasicGraph<Scalar> graph;
  const BoundModel bound = bind_model(graph, model, false);
  const NodeId a = graph.variable(features);
  const NodeId logits = classify(graph, bound, a);
  const Scalar inv = Scalar(1) / Scalar(features.dim(0) * features.dim(1));
  const NodeId score = graph.scale(graph.sum(graph.select_channel(logits, c)), inv);
  return graph.backward(score)[a];
}

/// A^c = ReLU(A (.) S^c).
template <typename Scalar>
BasicTensor<Scalar> class_feature(const BasicTensor<Scalar>& features, const BasicTensor<Scalar>& importance) {
  if (features.shape() != importance.shape()) {
    throw DimensionError("dropclass", "class_feature: features " + to_string(features.shape()) + " vs importance " +
                                          to_string(importance.shape()));
  }
  return relu(hadamard(features, importance));
}

/// A'_drop = (1/|C|) sum_{c != z} A^c. The divisor stays |C| when a class is
/// dropped.
template <typename Scalar>
BasicTensor<Scalar> aggregate(std::span<const BasicTensor<Scalar>> class_features, std::optional<int> z) {
  if (class_features.empty()) throw DimensionError("dropclass", "aggregate of no class features");
  const auto n = static_cast<Index>(class_features.size());
  if (z && (*z < 0 || *z >= n)) throw ContractError("dropclass", "aggregate: drop class out of range");
  BasicTensor<Scalar> out(class_features.front().shape());
  for (Index c = 0; c < n; ++c) {
    const auto& f = class_features[static_cast<std::size_t>(c)];
    if (f.shape() != out.shape()) throw DimensionError("dropclass", "aggregate: inconsistent class feature shapes");
    if (z && *z == c) continue;
    out.vec() += f.vec();
  }
  out.vec() /= Scalar(n);
  return out;
}

template <typename Scalar>
struct DropState {
  std::vector<BasicTensor<Scalar>> importance_maps;
  std::vector<BasicTensor<Scalar>> class_features;
  std::optional<int> dropped_class;
  BasicTensor<Scalar> aggregated;   // A'_drop
  BasicTensor<Scalar> compensated;  // A_drop
  BasicTensor<Scalar> logits;       // y_hat_drop
};

/// The drop branch: per-class features, aggregation without z, compensation
/// conv, then the shared classifier.
template <typename Scalar>
DropState<Scalar> drop_forward(const BasicModel<Scalar>& model, const BasicTensor<Scalar>& features,
                               std::optional<int> z) {
  if (features.rank() != 3 || features.channels() != model.config.feature_channels) {
    throw DimensionError("dropclass", "drop_forward expects [h,w,k] features, got " + to_string(features.shape()));
  }
  DropState<Scalar> st;
  st.dropped_class = z;
  st.importance_maps = importance_maps(model, features.dim(0), features.dim(1));
  for (const auto& s : st.importance_maps) st.class_features.push_back(class_feature(features, s));
  st.aggregated = aggregate<Scalar>(st.class_features, z);
  st.compensated =
      conv2d(st.aggregated, model.compensation.kernel, model.compensation.bias, Padding::same);
  st.logits = classify(model, st.compensated);
  return st;
}

struct DropBranchNodes {
  std::vector<NodeId> class_features;
  NodeId aggregated;
  NodeId compensated;
  NodeId logits;
};

/// Graph form of drop_forward. Importance maps enter as constants, so no
/// gradient flows into the classifier through S^c.
template <typename Scalar>
DropBranchNodes drop_forward(BasicGraph<Scalar>& graph, const BoundModel& model, NodeId features,
                             std::span<const BasicTensor<Scalar>> importance, std::optional<int> z) {
  const auto n = static_cast<Index>(importance.size());
  if (z && (*z < 0 || *z >= n)) throw ContractError("dropclass", "drop_forward: drop class out of range");
  DropBranchNodes out;
  std::vector<std::pair<NodeId, Scalar>> kept;
  for (Index c = 0; c < n; ++c) {
    const NodeId s = graph.input(importance[static_cast<std::size_t>(c)]);
    const NodeId ac = graph.relu(graph.hadamard(features, s));
    out.class_features.push_back(ac);
    if (!(z && *z == c)) kept.emplace_back(ac, Scalar(1) / Scalar(n));
  }
  if (kept.empty()) {
    // |C| = 1 with the only class dropped.
    kept.emplace_back(out.class_features.front(), Scalar(0));
  }
  out.aggregated = graph.linear_combination(kept);
  out.compensated = compensate(graph, model, out.aggregated);
  out.logits = classify(graph, model, out.compensated);
  return out;
}

// Losses ----------------------------------------------------------------------

/// Pixels that are not labelled ignore.
Index counted_pixels(const LabelMap& labels);

std::vector<double> unit_class_weights(Index num_classes);

template <typename Scalar>
NodeId suppression_sum(BasicGraph<Scalar>& graph, NodeId drop_logits, int z) {
  return graph.sum(graph.select_channel(graph.softmax_channels(drop_logits), z));
}

namespace detail {

template <typename Scalar>
double cross_entropy_mean(const BasicTensor<Scalar>& logits, const LabelMap& labels,
                          std::span<const double> class_weights, std::optional<int> masked) {
  const Index counted = counted_pixels(labels);
  if (counted == 0) return 0.0;
  std::vector<Scalar> w(class_weights.begin(), class_weights.end());
  BasicGraph<Scalar> graph;
  const NodeId ce = graph.cross_entropy(graph.input(logits), labels, w, masked);
  return double(graph.value(ce).item()) / double(counted);
}

}  // namespace detail

/// Mean over non-ignore pixels of weight[y] * -log softmax(logits)[y].
template <typename Scalar>
double loss_ce(const BasicTensor<Scalar>& logits, const LabelMap& labels, std::span<const double> class_weights) {
  return detail::cross_entropy_mean(logits, labels, class_weights, std::nullopt);
}

/// As loss_ce on the drop-branch logits, with pixels labelled z contributing
/// zero. The denominator is unchanged by the mask.
template <typename Scalar>
double loss_ce_drop(const BasicTensor<Scalar>& drop_logits, const LabelMap& labels, std::optional<int> z,
                    std::span<const double> class_weights) {
  if (z && (*z < 0 || *z >= drop_logits.channels())) {
    throw ContractError("dropclass", "loss_ce_drop: drop class out of range");
  }
  return detail::cross_entropy_mean(drop_logits, labels, class_weights, z);
}

/// Mean over all pixels of softmax(drop_logits)[z]; zero when nothing is dropped.
template <typename Scalar>
double loss_sup(const BasicTensor<Scalar>& drop_logits, std::optional<int> z) {
  if (!z) return 0.0;
  if (*z < 0 || *z >= drop_logits.channels()) throw ContractError("dropclass", "loss_sup: drop class out of range");
  const auto p = softmax_channels(drop_logits);
  return double(p.pixels().col(*z).sum()) / double(p.pixels().rows());
}

double loss_seg(double l_ce, double l_ce_drop, double lambda);
double loss_total(double l_seg, double l_sup, double alpha);

struct LossBreakdown {
  double l_ce = 0;
  double l_ce_drop = 0;
  double l_seg = 0;
  double l_sup = 0;
  double l_total = 0;

  bool all_finite() const;
  bool operator==(const LossBreakdown&) const = default;
};

// Training objective ------------------------------------------------------------

enum class Objective {
  baseline,        // L_CE only
  dropclass,       // L_seg + alpha * L_sup
  no_suppression,  // L_seg
  label_drop,      // cross-entropy on the original logits with labels of z ignored
};

std::string to_string(Objective objective);
Objective parse_objective(const std::string& name);

struct ObjectiveSettings {
  Objective kind = Objective::dropclass;
  double lambda = 0.0;
  double alpha = 10.0;
  std::optional<int> z;
  std::vector<double> class_weights;
  double ce_scale = 1.0;   // 1 / non-ignore pixels in the batch
  double sup_scale = 1.0;  // 1 / all pixels in the batch
};

struct ObjectiveNodes {
  NodeId features;
  NodeId logits;
  std::optional<DropBranchNodes> drop;
  NodeId l_ce;
  NodeId l_ce_drop;
  NodeId l_seg;
  NodeId l_sup;
  NodeId l_total;
};

/// Records one batch item's share of the objective. Per-item nodes are
/// already scaled by the batch normalizers, so summing them across items
/// gives the batch losses and the batch gradient.
template <typename Scalar>
ObjectiveNodes build_objective(BasicGraph<Scalar>& graph, const BoundModel& model, const BasicTensor<Scalar>& image,
                               const LabelMap& labels, std::span<const BasicTensor<Scalar>> importance,
                               const ObjectiveSettings& settings) {
  if (image.rank() != 3 || image.dim(0) != labels.height || image.dim(1) != labels.width) {
    throw DimensionError("dropclass", "image and label shapes differ");
  }
  std::vector<Scalar> weights(settings.class_weights.begin(), settings.class_weights.end());
  const Scalar ce_scale = Scalar(settings.ce_scale);
  const Scalar lambda = Scalar(settings.lambda);

  ObjectiveNodes n;
  n.features = extract_features(graph, model, graph.input(image));
  n.logits = classify(graph, model, n.features);
  n.l_ce = graph.scale(graph.cross_entropy(n.logits, labels, weights), ce_scale);

  const NodeId zero = graph.input(BasicTensor<Scalar>::scalar(0));
  switch (settings.kind) {
    case Objective::baseline:
      n.l_ce_drop = zero;
      n.l_seg = n.l_ce;
      n.l_sup = zero;
      n.l_total = n.l_ce;
      break;
    case Objective::label_drop:
      n.l_ce_drop = graph.scale(graph.cross_entropy(n.logits, labels, weights, settings.z), ce_scale);
      n.l_seg = n.l_ce_drop;
      n.l_sup = zero;
      n.l_total = n.l_ce_drop;
      break;
    case Objective::dropclass:
    case Objective::no_suppression: {
      n.drop = drop_forward(graph, model, n.features, importance, settings.z);
      n.l_ce_drop = graph.scale(graph.cross_entropy(n.drop->logits, labels, weights, settings.z), ce_scale);
      n.l_seg = graph.linear_combination({{n.l_ce, Scalar(1) - lambda}, {n.l_ce_drop, lambda}});
      n.l_sup = settings.z ? graph.scale(suppression_sum(graph, n.drop->logits, *settings.z), Scalar(settings.sup_scale))
                           : zero;
      const Scalar alpha = settings.kind == Objective::dropclass ? Scalar(settings.alpha) : Scalar(0);
      n.l_total = alpha == Scalar(0) ? n.l_seg : graph.linear_combination({{n.l_seg, Scalar(1)}, {n.l_sup, alpha}});
      break;
    }
  }
  return n;
}

}  // namespace dropclass
