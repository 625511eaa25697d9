#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dropclass/datagen.hpp"
#include "dropclass/dropclass.hpp"
#include "dropclass/keyvalue.hpp"
#include "dropclass/model.hpp"

namespace dropclass {

using TrainMode = Objective;

struct TrainConfig {
  TrainMode mode = TrainMode::baseline;
  Index iterations = 3000;
  Index batch_size = 8;
  double learning_rate = 0.05;  // decays linearly to 0 over the run
  double momentum = 0.9;
  double alpha = 10.0;
  bool reweight = false;  // median frequency balancing
  std::optional<int> resample_class;
  std::uint64_t seed = 0;
  ModelConfig model;
  int threads = 1;
  std::filesystem::path dump_dir;  // where a non-finite batch is written, if set

  void validate() const;

  /// Keys: mode, iterations, batch_size, learning_rate, momentum, alpha,
  /// reweight, resample_class, seed, threads, model.* (see ModelConfig).
  /// A missing `iterations` means 3000 for baseline and twice that for the
  /// drop-based modes.
  static TrainConfig from_keyvalues(const KeyValues& kv);
  KeyValues to_keyvalues() const;
};

Index default_iterations(TrainMode mode);

/// Derived seeds; the model init depends only on the master seed so every
/// mode starts from the same weights.
std::uint64_t init_seed_for(std::uint64_t master);
std::uint64_t shuffle_seed_for(std::uint64_t master);
std::uint64_t drop_seed_for(std::uint64_t master);

/// v <- momentum * v + g; p <- p - lr * v.
void sgd_update(Tensor& param, const Tensor& grad, double learning_rate, double momentum, Tensor& velocity);

class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum) : momentum_(momentum) {}

  /// Missing gradients (parameters outside the objective) count as zero.
  void step(Model& model, std::span<const std::optional<Tensor>> grads, double learning_rate);

 private:
  double momentum_;
  std::vector<Tensor> velocity_;
};

struct StepRecord {
  Index iteration = 0;
  LossBreakdown loss;
  double lambda = 0;
  double drop_probability = 0;
  std::optional<int> z;
};

struct StepResult {
  LossBreakdown loss;
  std::optional<int> z;
  std::vector<std::optional<Tensor>> grads;  // per model parameter
};

/// Raised when a step produces a non-finite value; the message names the
/// iteration and sample seeds of the batch.
class TrainingError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Losses and parameter gradients for one batch at a fixed drop class.
StepResult compute_step(const Model& model, std::span<const Sample* const> batch, const Schedule& schedule,
                        const TrainConfig& config, std::optional<int> z, std::span<const double> class_weights);

/// One iteration: draw z (drop modes only), compute the objective and apply
/// the SGD-momentum update.
StepResult train_step(Model& model, SgdMomentum& optimizer, std::span<const Sample* const> batch,
                      const Schedule& schedule, const TrainConfig& config, Rng& drop_rng,
                      std::span<const double> class_weights, double learning_rate, Index iteration = 0);

struct TrainReport {
  std::vector<StepRecord> trace;
  Model model;
  std::vector<double> class_weights;
  double wall_seconds = 0;

  std::vector<std::optional<int>> drawn_classes() const;
};

using ProgressFn = std::function<void(const StepRecord&)>;

TrainReport train(const Dataset& dataset, const TrainConfig& config, const ProgressFn& progress = {});

/// iteration,l_ce,l_ce_drop,l_seg,l_sup,l_total,lambda,p_drop,z  (z = -1 when none)
std::string loss_trace_csv(std::span<const StepRecord> trace);

}  // namespace dropclass
