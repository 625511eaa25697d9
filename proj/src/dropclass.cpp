#include "dropclass/dropclass.hpp"

#include <cmath>

namespace dropclass {

Schedule schedule_at(Index t, Index total) {
  if (total <= 0) throw ContractError("dropclass", "schedule needs a positive iteration count");
  if (t < 0 || t > total) {
    throw ContractError("dropclass", "iteration " + std::to_string(t) + " outside [0, " + std::to_string(total) + "]");
  }
  const double r = double(t) / double(total);
  return {r, r};
}

std::optional<int> sample_drop(Rng& rng, Index num_classes, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("dropclass", "drop probability must lie in [0, 1]");
  if (num_classes < 1) throw ContractError("dropclass", "sample_drop needs at least one class");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (!(coin(rng) < p)) return std::nullopt;
  std::uniform_int_distribution<int> pick(0, static_cast<int>(num_classes) - 1);
  return pick(rng);
}

Index counted_pixels(const LabelMap& labels) {
  Index n = 0;
  for (auto v : labels.data) n += v != LabelMap::kIgnore;
  return n;
}

std::vector<double> unit_class_weights(Index num_classes) {
  return std::vector<double>(static_cast<std::size_t>(num_classes), 1.0);
}

double loss_seg(double l_ce, double l_ce_drop, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("dropclass", "lambda must lie in [0, 1]");
  return (1.0 - lambda) * l_ce + lambda * l_ce_drop;
}

double loss_total(double l_seg, double l_sup, double alpha) {
  if (!(alpha >= 0.0)) throw ContractError("dropclass", "alpha must be non-negative");
  return l_seg + alpha * l_sup;
}

bool LossBreakdown::all_finite() const {
  return std::isfinite(l_ce) && std::isfinite(l_ce_drop) && std::isfinite(l_seg) && std::isfinite(l_sup) &&
         std::isfinite(l_total);
}

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::baseline:
      return "baseline";
    case Objective::dropclass:
      return "dropclass";
    case Objective::no_suppression:
      return "ablation_no_sup";
    case Objective::label_drop:
      return "ablation_label_drop";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  for (auto o : {Objective::baseline, Objective::dropclass, Objective::no_suppression, Objective::label_drop}) {
    if (to_string(o) == name) return o;
  }
  throw ContractError("trainer", "unknown mode '" + name +
                                     "' (expected baseline, dropclass, ablation_no_sup or ablation_label_drop)");
}

}  // namespace dropclass
