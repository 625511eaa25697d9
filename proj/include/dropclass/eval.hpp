#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dropclass/datagen.hpp"
#include "dropclass/model.hpp"

namespace dropclass {

/// Per-pixel argmax over the logits.
LabelMap predict(const Model& model, const Tensor& image);

using Predictor = std::function<LabelMap(const Sample&)>;
Predictor model_predictor(const Model& model);

struct IoUReport {
  std::vector<std::optional<double>> iou;  // empty when the class has no union
  double miou = 0;                         // mean over defined classes
  std::optional<double> miou_rare;         // mean over the floor(C/2) rarest classes
  std::vector<int> rare_classes;
};

/// The floor(C/2) classes with the lowest frequency; ties go to the lower index.
std::vector<int> rarest_classes(std::span<const double> frequencies);

IoUReport iou_per_class(std::span<const LabelMap> predictions, std::span<const LabelMap> labels, Index num_classes,
                        std::span<const double> frequencies = {});

IoUReport evaluate(const Predictor& predictor, const Dataset& dataset, std::span<const double> frequencies = {});

/// Top-3 erasers per class chosen on a reference run; `eraser[y]` holds the
/// classes whose removal hurt class y the most (-1 when undefined).
struct ErasureReference {
  std::vector<std::array<int, 3>> eraser;
  std::vector<int> vulnerable;  // floor(C/2) classes with the most negative delta
};

struct ErasureEntry {
  std::array<int, 3> eraser{-1, -1, -1};
  std::optional<double> iou_intact;
  std::optional<double> iou_erased;  // mean IoU over the three erased copies
  std::optional<double> delta;       // iou_erased - iou_intact
};

struct ErasureReport {
  std::vector<ErasureEntry> entries;
  /// erased_iou(x, y): IoU of class y on the copy with class x erased (NaN if undefined).
  Eigen::MatrixXd erased_iou;
  double miou_intact = 0;
  double miou_erased = 0;
  std::optional<double> miou_vulnerable_intact;
  std::optional<double> miou_vulnerable_erased;
  ErasureReference reference;
};

/// Builds the erased copies with the dataset mean colour and picks the
/// Top-3 erasers from this predictor's own drops.
ErasureReport erasure_benchmark(const Predictor& predictor, const Dataset& dataset);
/// Same protocol, reusing the erasers and vulnerable set of a reference run.
ErasureReport erasure_benchmark(const Predictor& predictor, const Dataset& dataset,
                                const ErasureReference& reference);

struct CorrelationReport {
  Eigen::MatrixXd cosine;  // C x C
  Eigen::VectorXd row_sums;  // off-diagonal sum per row
  double mean_row_sum = 0;
};

/// Cosine similarity between the classifier rows of every class pair.
CorrelationReport weight_correlation(const Model& model);

/// ReLU of the importance-weighted feature sum, [h, w] as a row-major tensor [h, w, 1].
Tensor gradcam_map(const Model& model, const Tensor& image, int c);
/// Share of the map's mass inside the pixels where `mask` is true.
double mass_fraction(const Tensor& map, std::span<const bool> mask);

/// Writes `<prefix>.pgm` (normalized to its maximum) and `<prefix>.csv` (raw values).
void export_gradcam(const Tensor& map, const std::filesystem::path& prefix);

std::string iou_csv(const IoUReport& report, const SceneSpec& spec);
std::string erasure_csv(const ErasureReport& report, const SceneSpec& spec);
std::string correlation_csv(const CorrelationReport& report, const SceneSpec& spec);

}  // namespace dropclass
