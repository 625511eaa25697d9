#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dropclass/label_map.hpp"
#include "dropclass/tensor.hpp"

namespace dropclass {

struct NodeId {
  std::size_t index = 0;
  bool operator==(const NodeId&) const = default;
};

enum class OpKind {
  input,
  variable,
  conv2d,
  relu,
  add,
  hadamard,
  scale,
  sum,
  mean,
  softmax_channels,
  select_channel,
  cross_entropy,
  linear_combination,
};

template <typename Scalar>
class BasicGraph;

/// Gradients produced by one backward pass, indexed by node.
template <typename Scalar>
class BasicGradients {
 public:
  using TensorT = BasicTensor<Scalar>;

  explicit BasicGradients(std::vector<std::optional<TensorT>> grads) : grads_(std::move(grads)) {}

  bool has(NodeId id) const { return id.index < grads_.size() && grads_[id.index].has_value(); }

  const TensorT& operator[](NodeId id) const {
    if (!has(id)) {
      throw ContractError("tensor_core", "no gradient recorded for node " + std::to_string(id.index));
    }
    return *grads_[id.index];
  }

 private:
  std::vector<std::optional<TensorT>> grads_;
};

/// Tape of tensor operations supporting one reverse sweep.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a reverse index walk is a valid reverse topological order. Values are
/// never mutated once recorded. Leaves are either inputs (constants, no
/// gradient) or variables (gradient requested). An interior node requires a
/// gradient iff any of its inputs does; backward skips everything else.
template <typename Scalar>
class BasicGraph {
 public:
  using TensorT = BasicTensor<Scalar>;
  using GradSlots = std::vector<std::optional<TensorT>>;

  // Recorded closures refer back to this graph.
  BasicGraph() = default;
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  NodeId input(TensorT value) { return leaf(OpKind::input, std::move(value), false); }
  NodeId variable(TensorT value) { return leaf(OpKind::variable, std::move(value), true); }

  const TensorT& value(NodeId id) const { return node(id).value; }
  OpKind kind(NodeId id) const { return node(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return node(id).inputs; }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  NodeId conv2d(NodeId in, NodeId kernel, NodeId bias, Padding padding = Padding::same) {
    const TensorT& x = value(in);
    const TensorT& k = value(kernel);
    const TensorT& b = value(bias);
    const ConvGeometry g = conv_geometry(x, k, b, padding);

    // Keep the unfolded input only when the kernel needs a gradient.
    std::shared_ptr<RowMatrix<Scalar>> patches;
    if (!g.is_pointwise() && requires_grad(kernel)) {
      patches = std::make_shared<RowMatrix<Scalar>>(detail::im2col(x, g));
    }
    TensorT out(Shape{g.out_h, g.out_w, g.cout});
    auto kmat = detail::kernel_matrix(k, g);
    if (g.is_pointwise()) {
      out.pixels().noalias() = x.pixels() * kmat;
    } else if (patches) {
      out.pixels().noalias() = *patches * kmat;
    } else {
      out.pixels().noalias() = detail::im2col(x, g) * kmat;
    }
    out.pixels().rowwise() += b.vec().transpose();
    require_finite(out, "conv2d");

    return record(OpKind::conv2d, {in, kernel, bias}, std::move(out),
                  [this, in, kernel, bias, g, patches](const TensorT& up, GradSlots& grads) {
                    auto gout = up.pixels();
                    if (requires_grad(bias)) {
                      TensorT db(Shape{g.cout});
                      db.vec() = gout.colwise().sum().transpose();
                      accumulate(grads, bias, std::move(db));
                    }
                    if (requires_grad(kernel)) {
                      TensorT dk(value(kernel).shape());
                      Eigen::Map<RowMatrix<Scalar>> dkm(dk.data().data(), g.patch_size(), g.cout);
                      if (g.is_pointwise()) {
                        dkm.noalias() = value(in).pixels().transpose() * gout;
                      } else {
                        dkm.noalias() = patches->transpose() * gout;
                      }
                      accumulate(grads, kernel, std::move(dk));
                    }
                    if (requires_grad(in)) {
                      auto kmat = detail::kernel_matrix(value(kernel), g);
                      TensorT dx(value(in).shape());
                      if (g.is_pointwise()) {
                        dx.pixels().noalias() = gout * kmat.transpose();
                      } else {
                        RowMatrix<Scalar> dpatch = gout * kmat.transpose();
                        detail::col2im_accumulate(dpatch, g, dx);
                      }
                      accumulate(grads, in, std::move(dx));
                    }
                  });
  }

  NodeId relu(NodeId in) {
    return record(OpKind::relu, {in}, dropclass::relu(value(in)), [this, in](const TensorT& up, GradSlots& grads) {
      TensorT dx(up.shape());
      dx.vec() = (value(in).vec().array() > Scalar(0)).select(up.vec().array(), Scalar(0)).matrix();
      accumulate(grads, in, std::move(dx));
    });
  }

  NodeId add(NodeId a, NodeId b) {
    return record(OpKind::add, {a, b}, value(a) + value(b), [this, a, b](const TensorT& up, GradSlots& grads) {
      accumulate(grads, a, up);
      accumulate(grads, b, up);
    });
  }

  NodeId hadamard(NodeId a, NodeId b) {
    return record(OpKind::hadamard, {a, b}, dropclass::hadamard(value(a), value(b)),
                  [this, a, b](const TensorT& up, GradSlots& grads) {
                    if (requires_grad(a)) accumulate(grads, a, dropclass::hadamard(up, value(b)));
                    if (requires_grad(b)) accumulate(grads, b, dropclass::hadamard(up, value(a)));
                  });
  }

  NodeId scale(NodeId in, Scalar factor) {
    return record(OpKind::scale, {in}, factor * value(in), [this, in, factor](const TensorT& up, GradSlots& grads) {
      accumulate(grads, in, factor * up);
    });
  }

  NodeId sum(NodeId in) {
    return record(OpKind::sum, {in}, TensorT::scalar(value(in).vec().sum()),
                  [this, in](const TensorT& up, GradSlots& grads) {
                    accumulate(grads, in, TensorT(value(in).shape(), up.item()));
                  });
  }

  NodeId mean(NodeId in) {
    const Index n = value(in).size();
    if (n == 0) throw DimensionError("tensor_core", "mean of empty tensor");
    return record(OpKind::mean, {in}, TensorT::scalar(value(in).vec().sum() / Scalar(n)),
                  [this, in, n](const TensorT& up, GradSlots& grads) {
                    accumulate(grads, in, TensorT(value(in).shape(), up.item() / Scalar(n)));
                  });
  }

  NodeId softmax_channels(NodeId in) {
    auto probs = dropclass::softmax_channels(value(in));
    return record(OpKind::softmax_channels, {in}, std::move(probs), [this, in, self = nodes_.size()](
                                                                          const TensorT& up, GradSlots& grads) {
      const TensorT& p = nodes_[self].value;
      TensorT dx(p.shape());
      auto pm = p.pixels();
      auto um = up.pixels();
      Vector<Scalar> dots = (pm.cwiseProduct(um)).rowwise().sum();
      dx.pixels() = pm.cwiseProduct(um - dots.replicate(1, pm.cols()));
      accumulate(grads, in, std::move(dx));
    });
  }

  /// [h, w, C] -> [h, w, 1] holding channel c.
  NodeId select_channel(NodeId in, Index c) {
    const TensorT& x = value(in);
    if (x.rank() != 3 || c < 0 || c >= x.channels()) {
      throw DimensionError("tensor_core", "select_channel " + std::to_string(c) + " of " + to_string(x.shape()));
    }
    TensorT out(Shape{x.dim(0), x.dim(1), 1});
    out.pixels() = x.pixels().col(c);
    return record(OpKind::select_channel, {in}, std::move(out), [this, in, c](const TensorT& up, GradSlots& grads) {
      TensorT dx(value(in).shape());
      dx.pixels().col(c) = up.pixels().col(0);
      accumulate(grads, in, std::move(dx));
    });
  }

  /// Sum over pixels of weight[y] * -log softmax(logits)[y]. Pixels labelled
  /// ignore, or labelled `masked_class`, contribute nothing. Callers divide
  /// by the pixel count they want to average over.
  NodeId cross_entropy(NodeId logits, const LabelMap& labels, std::span<const Scalar> class_weights,
                       std::optional<int> masked_class = std::nullopt) {
    const TensorT& x = value(logits);
    if (x.rank() != 3 || x.dim(0) != labels.height || x.dim(1) != labels.width) {
      throw DimensionError("tensor_core", "cross_entropy logits " + to_string(x.shape()) + " vs labels [" +
                                              std::to_string(labels.height) + "," + std::to_string(labels.width) + "]");
    }
    const Index classes = x.channels();
    if (static_cast<Index>(class_weights.size()) != classes) {
      throw DimensionError("tensor_core", "cross_entropy expects " + std::to_string(classes) + " class weights");
    }
    require_labels_in_range(labels, classes, "tensor_core");

    auto probs = std::make_shared<TensorT>(dropclass::softmax_channels(x));
    auto xm = x.pixels();
    Scalar total = 0;
    for (Index p = 0; p < labels.size(); ++p) {
      const int y = labels[p];
      if (y == LabelMap::kIgnore || (masked_class && y == *masked_class)) continue;
      const Scalar m = xm.row(p).maxCoeff();
      const Scalar lse = m + std::log((xm.row(p).array() - m).exp().sum());
      total += class_weights[static_cast<std::size_t>(y)] * (lse - xm(p, y));
    }
    std::vector<Scalar> weights(class_weights.begin(), class_weights.end());
    return record(OpKind::cross_entropy, {logits}, TensorT::scalar(total),
                  [this, logits, labels, weights, masked_class, probs](const TensorT& up, GradSlots& grads) {
                    const Scalar u = up.item();
                    TensorT dx(probs->shape());
                    auto dm = dx.pixels();
                    auto pm = probs->pixels();
                    for (Index p = 0; p < labels.size(); ++p) {
                      const int y = labels[p];
                      if (y == LabelMap::kIgnore || (masked_class && y == *masked_class)) continue;
                      const Scalar w = u * weights[static_cast<std::size_t>(y)];
                      dm.row(p) = w * pm.row(p);
                      dm(p, y) -= w;
                    }
                    accumulate(grads, logits, std::move(dx));
                  });
  }

  /// Sum_i coefficient_i * term_i over same-shaped nodes.
  NodeId linear_combination(const std::vector<std::pair<NodeId, Scalar>>& terms) {
    if (terms.empty()) throw ContractError("tensor_core", "linear_combination of no terms");
    TensorT out(value(terms.front().first).shape());
    std::vector<NodeId> ins;
    for (const auto& [id, coeff] : terms) {
      require_shape(out, value(id), "linear_combination");
      out.vec() += coeff * value(id).vec();
      ins.push_back(id);
    }
    require_finite(out, "linear_combination");
    return record(OpKind::linear_combination, ins, std::move(out), [this, terms](const TensorT& up, GradSlots& grads) {
      for (const auto& [id, coeff] : terms) {
        if (requires_grad(id)) accumulate(grads, id, coeff * up);
      }
    });
  }

  /// Reverse sweep from a scalar node. Every node is visited at most once,
  /// in reverse recording order; fan-out contributions are summed.
  BasicGradients<Scalar> backward(NodeId loss) const {
    const TensorT& lv = value(loss);
    if (lv.size() != 1) {
      throw ContractError("tensor_core", "backward needs a scalar loss, got shape " + to_string(lv.shape()));
    }
    GradSlots grads(nodes_.size());
    grads[loss.index] = TensorT(lv.shape(), Scalar(1));
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!grads[i] || !n.requires_grad || !n.backward) continue;
      n.backward(*grads[i], grads);
    }
    for (const auto& g : grads) {
      if (g) require_finite(*g, "backward");
    }
    return BasicGradients<Scalar>(std::move(grads));
  }

 private:
  using BackwardFn = std::function<void(const TensorT&, GradSlots&)>;

  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    TensorT value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(NodeId id) const {
    if (id.index >= nodes_.size()) {
      throw ContractError("tensor_core", "unknown node " + std::to_string(id.index));
    }
    return nodes_[id.index];
  }

  NodeId leaf(OpKind kind, TensorT value, bool grad) {
    require_finite(value, kind == OpKind::input ? "input" : "variable");
    nodes_.push_back(Node{kind, {}, std::move(value), grad, {}});
    return NodeId{nodes_.size() - 1};
  }

  NodeId record(OpKind kind, std::vector<NodeId> ins, TensorT value, BackwardFn backward) {
    require_finite(value, "graph op");
    bool grad = false;
    for (NodeId id : ins) grad = grad || requires_grad(id);
    nodes_.push_back(Node{kind, std::move(ins), std::move(value), grad, grad ? std::move(backward) : BackwardFn{}});
    return NodeId{nodes_.size() - 1};
  }

  void accumulate(GradSlots& grads, NodeId id, TensorT g) const {
    if (!requires_grad(id)) return;
    auto& slot = grads[id.index];
    if (!slot) {
      slot = std::move(g);
    } else {
      slot->vec() += g.vec();
    }
  }

  std::vector<Node> nodes_;
};

using Graph = BasicGraph<float>;
using GraphD = BasicGraph<double>;
using Gradients = BasicGradients<float>;
using GradientsD = BasicGradients<double>;

}  // namespace dropclass
