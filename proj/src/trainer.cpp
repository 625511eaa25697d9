#include "dropclass/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <thread>

#include "dropclass/tensor_io.hpp"

namespace dropclass {
namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct ItemResult {
  LossBreakdown loss;
  std::vector<std::optional<Tensor>> grads;
};

ItemResult compute_item(const Model& model, const Sample& sample, std::span<const Tensor> importance,
                        const ObjectiveSettings& settings) {
  Graph graph;
  const BoundModel bound = bind_model(graph, model, true);
  const ObjectiveNodes nodes = build_objective(graph, bound, sample.image, sample.label, importance, settings);
  ItemResult r;
  r.loss.l_ce = graph.value(nodes.l_ce).item();
  r.loss.l_ce_drop = graph.value(nodes.l_ce_drop).item();
  r.loss.l_seg = graph.value(nodes.l_seg).item();
  r.loss.l_sup = graph.value(nodes.l_sup).item();
  r.loss.l_total = graph.value(nodes.l_total).item();
  const Gradients grads = graph.backward(nodes.l_total);
  for (NodeId p : bound.parameters()) {
    r.grads.push_back(grads.has(p) ? std::optional<Tensor>(grads[p]) : std::nullopt);
  }
  return r;
}

std::string describe_batch(std::span<const Sample* const> batch) {
  std::string seeds;
  for (std::size_t i = 0; i < batch.size(); ++i) seeds += (i ? "," : "") + std::to_string(batch[i]->seed);
  return "sample seeds [" + seeds + "]";
}

void dump_batch(const std::filesystem::path& dir, std::span<const Sample* const> batch) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    save_tensor(dir / ("img_" + std::to_string(i) + ".dct1"), batch[i]->image);
    save_labels(dir / ("lab_" + std::to_string(i) + ".dcl1"), batch[i]->label);
  }
}

}  // namespace

Index default_iterations(TrainMode mode) { return mode == TrainMode::baseline ? 3000 : 6000; }

std::uint64_t init_seed_for(std::uint64_t master) { return mix(master ^ 0x1111); }
std::uint64_t shuffle_seed_for(std::uint64_t master) { return mix(master ^ 0x2222); }
std::uint64_t drop_seed_for(std::uint64_t master) { return mix(master ^ 0x3333); }

void TrainConfig::validate() const {
  if (iterations < 1) throw ContractError("trainer", "iterations must be >= 1");
  if (batch_size < 1) throw ContractError("trainer", "batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ContractError("trainer", "learning_rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ContractError("trainer", "momentum must lie in [0, 1)");
  if (!(alpha >= 0)) throw ContractError("trainer", "alpha must be >= 0");
  if (threads < 1) throw ContractError("trainer", "threads must be >= 1");
  model.validate();
}

TrainConfig TrainConfig::from_keyvalues(const KeyValues& kv) {
  TrainConfig c;
  c.mode = parse_objective(kv.get_string("mode", "baseline"));
  c.iterations = kv.get_int("iterations", default_iterations(c.mode));
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.alpha = kv.get_double("alpha", c.alpha);
  c.reweight = kv.get_bool("reweight", c.reweight);
  if (kv.has("resample_class") && !kv.get_string("resample_class").empty()) {
    c.resample_class = int(kv.get_int("resample_class"));
  }
  c.seed = kv.get_uint("seed", c.seed);
  c.threads = int(kv.get_int("threads", c.threads));
  c.model = ModelConfig::from_keyvalues(kv.with_prefix("model."));
  c.validate();
  return c;
}

KeyValues TrainConfig::to_keyvalues() const {
  KeyValues kv;
  kv.set("mode", to_string(mode));
  kv.set("iterations", std::int64_t(iterations));
  kv.set("batch_size", std::int64_t(batch_size));
  kv.set("learning_rate", learning_rate);
  kv.set("momentum", momentum);
  kv.set("alpha", alpha);
  kv.set("reweight", reweight);
  if (resample_class) kv.set("resample_class", *resample_class);
  kv.set("seed", seed);
  kv.set("threads", threads);
  auto m = model.to_keyvalues();
  m.erase("init_seed");
  kv.merge(m, "model.");
  return kv;
}

void sgd_update(Tensor& param, const Tensor& grad, double learning_rate, double momentum, Tensor& velocity) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape()) {
    throw DimensionError("trainer", "sgd_update: parameter " + to_string(param.shape()) + ", gradient " +
                                        to_string(grad.shape()) + ", velocity " + to_string(velocity.shape()));
  }
  velocity.vec() = float(momentum) * velocity.vec() + grad.vec();
  param.vec() -= float(learning_rate) * velocity.vec();
}

void SgdMomentum::step(Model& model, std::span<const std::optional<Tensor>> grads, double learning_rate) {
  auto params = model.parameters();
  if (grads.size() != params.size()) throw DimensionError("trainer", "gradient count does not match parameters");
  if (velocity_.empty()) {
    for (const Tensor* p : params) velocity_.push_back(Tensor::zeros(p->shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = grads[i] ? *grads[i] : Tensor::zeros(params[i]->shape());
    sgd_update(*params[i], g, learning_rate, momentum_, velocity_[i]);
  }
}

StepResult compute_step(const Model& model, std::span<const Sample* const> batch, const Schedule& schedule,
                        const TrainConfig& config, std::optional<int> z, std::span<const double> class_weights) {
  if (batch.empty()) throw ContractError("trainer", "empty batch");
  Index counted = 0, total = 0;
  for (const Sample* s : batch) {
    counted += counted_pixels(s->label);
    total += s->label.size();
  }
  ObjectiveSettings settings;
  settings.kind = config.mode;
  settings.lambda = schedule.lambda;
  settings.alpha = config.alpha;
  settings.z = z;
  settings.class_weights.assign(class_weights.begin(), class_weights.end());
  settings.ce_scale = counted > 0 ? 1.0 / double(counted) : 0.0;
  settings.sup_scale = 1.0 / double(total);

  const Sample& first = *batch.front();
  const std::vector<Tensor> importance =
      config.mode == TrainMode::baseline || config.mode == TrainMode::label_drop
          ? std::vector<Tensor>{}
          : importance_maps(model, first.label.height, first.label.width);

  std::vector<ItemResult> items(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto work = [&](std::size_t i) {
    try {
      if (batch[i]->label.height != first.label.height || batch[i]->label.width != first.label.width) {
        throw DimensionError("trainer", "batch items must share a spatial size");
      }
      items[i] = compute_item(model, *batch[i], importance, settings);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t threads = std::min<std::size_t>(std::size_t(std::max(1, config.threads)), batch.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < batch.size(); i += threads) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Reduce in batch order so the result does not depend on the thread count.
  StepResult out;
  out.z = z;
  out.grads.resize(items.front().grads.size());
  for (const auto& it : items) {
    out.loss.l_ce += it.loss.l_ce;
    out.loss.l_ce_drop += it.loss.l_ce_drop;
    out.loss.l_seg += it.loss.l_seg;
    out.loss.l_sup += it.loss.l_sup;
    out.loss.l_total += it.loss.l_total;
    for (std::size_t p = 0; p < it.grads.size(); ++p) {
      if (!it.grads[p]) continue;
      if (!out.grads[p]) {
        out.grads[p] = *it.grads[p];
      } else {
        out.grads[p]->vec() += it.grads[p]->vec();
      }
    }
  }
  return out;
}

StepResult train_step(Model& model, SgdMomentum& optimizer, std::span<const Sample* const> batch,
                      const Schedule& schedule, const TrainConfig& config, Rng& drop_rng,
                      std::span<const double> class_weights, double learning_rate, Index iteration) {
  std::optional<int> z;
  if (config.mode != TrainMode::baseline) {
    z = sample_drop(drop_rng, model.config.num_classes, schedule.drop_probability);
  }
  StepResult result;
  try {
    result = compute_step(model, batch, schedule, config, z, class_weights);
  } catch (const NumericError& e) {
    dump_batch(config.dump_dir, batch);
    throw TrainingError("trainer", "non-finite value at iteration " + std::to_string(iteration) + " (" +
                                       describe_batch(batch) + "): " + e.what());
  }
  if (!result.loss.all_finite()) {
    dump_batch(config.dump_dir, batch);
    throw TrainingError("trainer", "non-finite loss at iteration " + std::to_string(iteration) + " (" +
                                       describe_batch(batch) + "): l_total=" + format_double(result.loss.l_total));
  }
  optimizer.step(model, result.grads, learning_rate);
  return result;
}

std::vector<std::optional<int>> TrainReport::drawn_classes() const {
  std::vector<std::optional<int>> out;
  for (const auto& r : trace) out.push_back(r.z);
  return out;
}

TrainReport train(const Dataset& dataset, const TrainConfig& config_in, const ProgressFn& progress) {
  TrainConfig config = config_in;
  config.model.num_classes = dataset.spec.num_classes();
  config.validate();
  if (dataset.samples.empty()) throw ContractError("trainer", "empty training set");

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  const auto frequencies = pixel_frequencies(dataset);
  report.class_weights =
      config.reweight ? median_frequency_weights(frequencies) : unit_class_weights(dataset.spec.num_classes());

  const Dataset resampled =
      config.resample_class ? resample_with_duplication(dataset, *config.resample_class) : Dataset{};
  const Dataset& data = config.resample_class ? resampled : dataset;

  report.model = init_model(config.model, init_seed_for(config.seed));
  SgdMomentum optimizer(config.momentum);
  Rng shuffle_rng(shuffle_seed_for(config.seed));
  Rng drop_rng(drop_seed_for(config.seed));

  std::vector<std::size_t> order(data.samples.size());
  std::size_t cursor = order.size();
  std::vector<const Sample*> batch;

  for (Index t = 0; t < config.iterations; ++t) {
    batch.clear();
    while (Index(batch.size()) < config.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch.push_back(&data.samples[order[cursor++]]);
    }
    const Schedule schedule = schedule_at(t, config.iterations);
    const double lr = config.learning_rate * (1.0 - double(t) / double(config.iterations));
    const StepResult r =
        train_step(report.model, optimizer, batch, schedule, config, drop_rng, report.class_weights, lr, t);
    StepRecord rec{t, r.loss, schedule.lambda, schedule.drop_probability, r.z};
    if (progress) progress(rec);
    report.trace.push_back(rec);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string loss_trace_csv(std::span<const StepRecord> trace) {
  std::string out = "iteration,l_ce,l_ce_drop,l_seg,l_sup,l_total,lambda,p_drop,z\n";
  for (const auto& r : trace) {
    out += std::to_string(r.iteration) + "," + format_double(r.loss.l_ce) + "," + format_double(r.loss.l_ce_drop) +
           "," + format_double(r.loss.l_seg) + "," + format_double(r.loss.l_sup) + "," +
           format_double(r.loss.l_total) + "," + format_double(r.lambda) + "," + format_double(r.drop_probability) +
           "," + std::to_string(r.z ? *r.z : -1) + "\n";
  }
  return out;
}

}  // namespace dropclass
