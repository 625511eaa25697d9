#include "dropclass/gradcheck.hpp"

#include <numeric>
#include <random>

#include "dropclass/dropclass.hpp"
#include "dropclass/graph.hpp"
#include "dropclass/model.hpp"

namespace dropclass {
namespace {

using Builder = std::function<NodeId(GraphD&, const std::vector<NodeId>&)>;

TensorD random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  TensorD t(shape, 0.0);
  for (Index i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

/// Keeps entries away from the ReLU kink so the central difference is smooth.
TensorD away_from_zero(TensorD t, double margin) {
  for (Index i = 0; i < t.size(); ++i) {
    if (std::abs(t[i]) < margin) t[i] = t[i] < 0 ? -margin : margin;
  }
  return t;
}

GradCheckResult check(const std::string& name, const std::vector<TensorD>& leaves, const Builder& build,
                      int coordinates, std::mt19937_64& rng) {
  GraphD graph;
  std::vector<NodeId> ids;
  for (const auto& t : leaves) ids.push_back(graph.variable(t));
  const GradientsD grads = graph.backward(build(graph, ids));

  std::vector<std::pair<std::size_t, Index>> all;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (Index i = 0; i < leaves[l].size(); ++i) all.emplace_back(l, i);
  }
  std::shuffle(all.begin(), all.end(), rng);
  if (Index(all.size()) > coordinates) all.resize(std::size_t(coordinates));

  GradCheckResult result;
  result.name = name;
  for (auto [l, i] : all) {
    auto f = [&](const TensorD& probe) {
      GraphD g;
      std::vector<NodeId> in;
      for (std::size_t k = 0; k < leaves.size(); ++k) in.push_back(g.input(k == l ? probe : leaves[k]));
      return double(g.value(build(g, in)).item());
    };
    const double numeric = finite_difference_gradient(f, leaves[l], i, 1e-6);
    const double analytic = grads.has(ids[l]) ? grads[ids[l]][i] : 0.0;
    result.add(analytic, numeric);
  }
  return result;
}

LabelMap random_labels(Index h, Index w, int classes, std::mt19937_64& rng, double ignore_share) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabelMap m(h, w);
  for (auto& v : m.data) v = u(rng) < ignore_share ? LabelMap::kIgnore : std::uint8_t(pick(rng));
  return m;
}

}  // namespace

std::vector<GradCheckResult> run_grad_check_suite(std::uint64_t seed, int coordinates) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;

  {
    const TensorD weight = random_tensor({7, 6, 4}, rng);
    out.push_back(check(
        "conv2d",
        {random_tensor({7, 6, 3}, rng), random_tensor({3, 3, 3, 4}, rng, 0.5), random_tensor({4}, rng)},
        [&](GraphD& g, const std::vector<NodeId>& in) {
          return g.sum(g.hadamard(g.conv2d(in[0], in[1], in[2], Padding::same), g.input(weight)));
        },
        coordinates, rng));
  }
  {
    const TensorD weight = random_tensor({6, 6, 3}, rng);
    out.push_back(check(
        "relu", {away_from_zero(random_tensor({6, 6, 3}, rng), 0.05)},
        [&](GraphD& g, const std::vector<NodeId>& in) { return g.sum(g.hadamard(g.relu(in[0]), g.input(weight))); },
        coordinates, rng));
  }
  {
    const LabelMap labels = random_labels(5, 6, 4, rng, 0.15);
    const std::vector<double> weights{0.7, 1.3, 1.0, 2.1};
    out.push_back(check(
        "softmax_cross_entropy", {random_tensor({5, 6, 4}, rng, 2.0)},
        [&](GraphD& g, const std::vector<NodeId>& in) {
          const NodeId ce = g.cross_entropy(in[0], labels, weights, 2);
          const NodeId sup = g.sum(g.select_channel(g.softmax_channels(in[0]), 2));
          return g.linear_combination({{ce, 1.0}, {sup, 0.5}});
        },
        coordinates, rng));
  }
  {
    ModelConfig cfg;
    cfg.widths = {4, 5};
    cfg.feature_channels = 5;
    cfg.num_classes = 4;
    const ModelD model = init_model(cfg, rng()).cast<double>();
    const TensorD image = random_tensor({6, 6, 3}, rng);
    const LabelMap labels = random_labels(6, 6, 4, rng, 0.1);
    const auto importance = importance_maps(model, 6, 6);

    ObjectiveSettings settings;
    settings.kind = Objective::dropclass;
    settings.lambda = 0.4;
    settings.alpha = 10.0;
    settings.z = 1;
    settings.class_weights = {1.0, 0.5, 2.0, 1.5};
    settings.ce_scale = 1.0 / double(counted_pixels(labels));
    settings.sup_scale = 1.0 / double(labels.size());

    std::vector<TensorD> leaves;
    for (const TensorD* p : model.parameters()) leaves.push_back(*p);
    out.push_back(check(
        "objective",
        leaves,
        [&](GraphD& g, const std::vector<NodeId>& in) {
          BoundModel bound;
          std::size_t k = 0;
          for (std::size_t l = 0; l < model.extractor.size(); ++l, k += 2) bound.extractor.push_back({in[k], in[k + 1]});
          bound.classifier = {in[k], in[k + 1]};
          bound.compensation = {in[k + 2], in[k + 3]};
          return build_objective(g, bound, image, labels, std::span<const TensorD>(importance), settings).l_total;
        },
        coordinates, rng));
  }
  return out;
}

}  // namespace dropclass
