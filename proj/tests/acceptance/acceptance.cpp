// Runs the nine acceptance criteria and prints one PASS/FAIL line each.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "dropclass/cli.hpp"
#include "dropclass/dropclass.hpp"
#include "dropclass/eval.hpp"
#include "dropclass/gradcheck.hpp"
#include "dropclass/tensor_io.hpp"
#include "dropclass/trainer.hpp"

using namespace dropclass;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

// 1 -------------------------------------------------------------------------

Outcome gradient_integrity() {
  const auto start = Clock::now();
  const auto results = run_grad_check_suite(1, 40);
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = elapsed <= 120.0;
  for (const auto& r : results) {
    o.pass = o.pass && r.ok() && r.coordinates >= 30;
    o.detail += r.name + " " + std::to_string(r.passed) + "/" + std::to_string(r.coordinates) + " ";
  }
  o.detail += "in " + fmt(elapsed, 1) + " s";
  return o;
}

// 2 -------------------------------------------------------------------------

Outcome importance_shortcut() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2);
  std::normal_distribution<float> normal(0.f, 1.f);
  double worst = 0;
  for (int m = 0; m < 5; ++m) {
    const Model model = init_model(ModelConfig{}, rng());
    Tensor image({24, 20, 3});
    for (Index i = 0; i < image.size(); ++i) image[i] = normal(rng);
    const Tensor features = extract_features(model, image);
    for (Index c = 0; c < model.config.num_classes; ++c) {
      const Tensor analytic = importance_map(model, 24, 20, c);
      const Tensor autodiff = importance_map_autodiff(model, features, c);
      worst = std::max(worst, double((analytic.vec() - autodiff.vec()).cwiseAbs().maxCoeff()));
    }
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-6 && elapsed <= 30.0, "max abs diff " + format_double(worst) + " in " + fmt(elapsed, 2) + " s"};
}

// 3 -------------------------------------------------------------------------

Outcome loss_equations() {
  const auto start = Clock::now();
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-6; };
  std::mt19937_64 rng(3);
  std::normal_distribution<float> normal(0.f, 1.f);
  auto random = [&](const Shape& shape) {
    Tensor t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = normal(rng);
    return t;
  };

  // Aggregation keeps the |C| divisor.
  {
    const Tensor t = random({3, 4, 5});
    const std::vector<Tensor> same(3, t);
    const Tensor dropped = aggregate<float>(same, 1);
    expect((dropped.vec() - t.vec() * (2.f / 3.f)).cwiseAbs().maxCoeff() <= 1e-6, "aggregate divisor with z");
    expect((aggregate<float>(same, std::nullopt).vec() - t.vec()).cwiseAbs().maxCoeff() <= 1e-6, "aggregate no z");
    const std::vector<Tensor> two{random({3, 4, 5}), t};
    expect((aggregate<float>(two, 0).vec() - t.vec() * 0.5f).cwiseAbs().maxCoeff() <= 1e-6, "aggregate |C|=2");
  }
  // Masked pixels do not influence the drop loss; the denominator is fixed.
  {
    LabelMap labels(6, 6);
    for (Index i = 0; i < labels.size(); ++i) labels[i] = std::uint8_t(i % 4);
    const std::vector<double> w{1.0, 2.0, 0.5, 1.5};
    const Tensor logits = random({6, 6, 4});
    Tensor perturbed = logits;
    for (Index i = 0; i < labels.size(); ++i)
      if (labels[i] == 2)
        for (Index c = 0; c < 4; ++c) perturbed[i * 4 + c] += 5.f * normal(rng);
    expect(near(loss_ce_drop(logits, labels, 2, w), loss_ce_drop(perturbed, labels, 2, w)), "masked invariance");
    LabelMap none = labels;
    for (auto& v : none.data) v = v == 3 ? 1 : v;
    expect(near(loss_ce_drop(logits, none, 3, w), loss_ce(logits, none, w)), "empty mask equals CE");
    const LabelMap all(6, 6, 1);
    expect(loss_ce_drop(logits, all, 1, w) == 0.0, "all masked gives zero");
    expect(near(loss_ce(Tensor({2, 2, 4}, 0.f), LabelMap(2, 2, 3), unit_class_weights(4)), std::log(4.0)),
           "uniform CE is ln 4");
  }
  // Endpoints of the loss balance.
  expect(loss_seg(1.7, 3.1, 0.0) == 1.7, "lambda 0");
  expect(loss_seg(1.7, 3.1, 1.0) == 3.1, "lambda 1");
  expect(near(loss_seg(2.0, 4.0, 0.5), 3.0), "lambda 0.5");
  // Suppression on uniform logits is 1/|C|.
  expect(near(loss_sup(Tensor({3, 3, 5}, 0.f), 2), 0.2), "uniform suppression");
  expect(loss_sup(random({3, 3, 5}), std::nullopt) == 0.0, "suppression without z");
  // Composition.
  expect(near(loss_total(1.0, 0.1, 10.0), 2.0), "alpha 10");
  expect(loss_total(1.3, 0.4, 0.0) == 1.3, "alpha 0");
  {
    ModelConfig cfg;
    cfg.widths = {4};
    cfg.feature_channels = 4;
    cfg.num_classes = 4;
    const Model model = init_model(cfg, 5);
    const Tensor image = random({5, 5, 3});
    LabelMap labels(5, 5);
    for (Index i = 0; i < labels.size(); ++i) labels[i] = std::uint8_t((i * 7) % 4);
    const auto maps = importance_maps(model, 5, 5);
    ObjectiveSettings s;
    s.lambda = 0.3;
    s.z = 2;
    s.class_weights = {1.0, 0.5, 2.0, 1.0};
    s.ce_scale = 1.0 / 25.0;
    s.sup_scale = 1.0 / 25.0;
    Graph g;
    const ObjectiveNodes n = build_objective(g, bind_model(g, model, false), image, labels,
                                             std::span<const Tensor>(maps), s);
    const double seg = g.value(n.l_seg).item(), sup = g.value(n.l_sup).item(), total = g.value(n.l_total).item();
    expect(near(total, seg + 10.0 * sup), "objective composition");
    const Tensor logits = g.value(n.logits), drop_logits = g.value(n.drop->logits);
    expect(near(g.value(n.l_ce).item(), loss_ce(logits, labels, s.class_weights)), "graph CE");
    expect(near(g.value(n.l_ce_drop).item(), loss_ce_drop(drop_logits, labels, 2, s.class_weights)), "graph drop CE");
    expect(near(sup, loss_sup(drop_logits, 2)), "graph suppression");
  }
  const double elapsed = seconds_since(start);
  std::string detail = failed.empty() ? "all equations exact to 1e-6" : "failed:";
  for (const auto& f : failed) detail += " " + f + ";";
  return {failed.empty() && elapsed <= 10.0, detail + " in " + fmt(elapsed, 2) + " s"};
}

// 4 -------------------------------------------------------------------------

Outcome drop_uniformity() {
  Rng rng(4);
  std::vector<int> counts(6, 0);
  for (int i = 0; i < 60000; ++i) ++counts[std::size_t(*sample_drop(rng, 6, 1.0))];
  double chi2 = 0;
  for (int c : counts) chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
  // Upper 1% point of chi-square with 5 degrees of freedom.
  const double critical = 15.0863;
  std::string detail = "counts";
  for (int c : counts) detail += " " + std::to_string(c);
  return {chi2 < critical, detail + "; chi2 " + fmt(chi2, 3) + " < " + fmt(critical, 3)};
}

// 5, 6, 7 ---------------------------------------------------------------------

struct RunSummary {
  double rare_delta = 0;   // IoU change of the rarest class when its companion is erased
  double topk_delta = 0;   // the same class under the baseline's Top-3 erasers of the same seed
  double mean_row_sum = 0;
  double miou = 0;
  double rare_iou = 0;
};

struct Experiments {
  int rarest = -1;
  int companion = -1;
  std::map<Objective, std::vector<RunSummary>> runs;
};

TrainConfig acceptance_config(Objective mode, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.iterations = default_iterations(mode);
  cfg.batch_size = 4;
  cfg.reweight = true;
  cfg.seed = seed;
  cfg.model.widths = {8, 16, 16};
  cfg.model.feature_channels = 16;
  return cfg;
}

Experiments run_experiments(int seeds, const fs::path& work) {
  const SceneSpec spec = default_scene_spec();
  const Dataset train_set = generate_dataset(spec, 2000, 0, Split::train);
  const Dataset test_set = generate_dataset(spec, 300, 1'000'000, Split::test);
  Experiments ex;
  const auto freq = pixel_frequencies(train_set);
  ex.rarest = int(std::min_element(freq.begin(), freq.end()) - freq.begin());
  for (const auto& rule : spec.rules)
    if (rule.subject == ex.rarest) ex.companion = rule.companion;
  if (ex.companion < 0) throw ProtocolError("acceptance", "rarest class has no companion rule");

  std::string csv = "mode,seed,rare_delta,topk_delta,mean_row_sum,miou,rare_iou,seconds\n";
  std::vector<ErasureReference> baseline_erasers;
  for (Objective mode : {Objective::baseline, Objective::dropclass, Objective::no_suppression, Objective::label_drop}) {
    for (int s = 1; s <= seeds; ++s) {
      const auto start = Clock::now();
      const TrainReport report = train(train_set, acceptance_config(mode, std::uint64_t(s)));
      const Predictor predictor = model_predictor(report.model);
      const ErasureReport er = mode == Objective::baseline
                                   ? erasure_benchmark(predictor, test_set)
                                   : erasure_benchmark(predictor, test_set, baseline_erasers[std::size_t(s - 1)]);
      if (mode == Objective::baseline) baseline_erasers.push_back(er.reference);
      RunSummary r;
      const auto& entry = er.entries[std::size_t(ex.rarest)];
      r.rare_iou = entry.iou_intact.value_or(NAN);
      r.rare_delta = er.erased_iou(ex.companion, ex.rarest) - r.rare_iou;
      r.topk_delta = entry.delta.value_or(NAN);
      r.mean_row_sum = weight_correlation(report.model).mean_row_sum;
      r.miou = er.miou_intact;
      ex.runs[mode].push_back(r);
      const double took = seconds_since(start);
      std::cerr << "  trained " << to_string(mode) << " seed " << s << " in " << fmt(took, 0) << " s: rare delta "
                << fmt(r.rare_delta) << ", mean row sum " << fmt(r.mean_row_sum) << ", mIoU " << fmt(r.miou) << "\n";
      csv += to_string(mode) + "," + std::to_string(s) + "," + format_double(r.rare_delta) + "," +
             format_double(r.topk_delta) + "," + format_double(r.mean_row_sum) + "," + format_double(r.miou) + "," +
             format_double(r.rare_iou) + "," + fmt(took, 1) + "\n";
    }
  }
  write_file_atomic(work / "training_runs.csv", csv);
  return ex;
}

std::vector<double> field(const std::vector<RunSummary>& runs, double RunSummary::*member) {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(r.*member);
  return v;
}

Outcome erasure_direction(const Experiments& ex) {
  const auto base = field(ex.runs.at(Objective::baseline), &RunSummary::rare_delta);
  const auto drop = field(ex.runs.at(Objective::dropclass), &RunSummary::rare_delta);
  const bool pass = std::abs(mean(drop)) < std::abs(mean(base));
  return {pass, "class " + std::to_string(ex.rarest) + " with class " + std::to_string(ex.companion) +
                    " erased: mean delta baseline " + fmt(mean(base)) + " [" + join(base) + "], dropclass " +
                    fmt(mean(drop)) + " [" + join(drop) + "]; under the baseline Top-3 erasers: baseline " +
                    fmt(mean(field(ex.runs.at(Objective::baseline), &RunSummary::topk_delta))) + ", dropclass " +
                    fmt(mean(field(ex.runs.at(Objective::dropclass), &RunSummary::topk_delta)))};
}

Outcome correlation_direction(const Experiments& ex) {
  const auto base = field(ex.runs.at(Objective::baseline), &RunSummary::mean_row_sum);
  const auto drop = field(ex.runs.at(Objective::dropclass), &RunSummary::mean_row_sum);
  return {mean(drop) < mean(base), "mean row sum baseline " + fmt(mean(base)) + " [" + join(base) + "], dropclass " +
                                       fmt(mean(drop)) + " [" + join(drop) + "]"};
}

Outcome ablation_structure(const Experiments& ex) {
  const auto base = field(ex.runs.at(Objective::baseline), &RunSummary::rare_delta);
  const auto drop = field(ex.runs.at(Objective::dropclass), &RunSummary::rare_delta);
  const auto nosup = field(ex.runs.at(Objective::no_suppression), &RunSummary::rare_delta);
  const double lo = std::min(mean(base), mean(drop)), hi = std::max(mean(base), mean(drop));
  const bool between = mean(nosup) >= lo && mean(nosup) <= hi;
  const auto base_miou = field(ex.runs.at(Objective::baseline), &RunSummary::miou);
  const auto ld_miou = field(ex.runs.at(Objective::label_drop), &RunSummary::miou);
  const bool label_drop_ok = mean(ld_miou) <= mean(base_miou);
  std::string detail = "no_sup delta " + fmt(mean(nosup)) + " +- " + fmt(stddev(nosup)) + " (" +
                       (between ? "between baseline and dropclass" : "outside baseline..dropclass") +
                       "); label_drop mIoU " + fmt(mean(ld_miou)) + " +- " + fmt(stddev(ld_miou)) +
                       " vs baseline " + fmt(mean(base_miou)) + " +- " + fmt(stddev(base_miou));
  return {label_drop_ok, detail};
}

// 8 -------------------------------------------------------------------------

Outcome replay_determinism(const fs::path& work) {
  const fs::path dir = work / "replay";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ostringstream out, err;
  auto call = [&](std::vector<std::string> args) { return run(args, out, err); };
  int status = call({"gen-data", "--samples", "24", "--seed", "8", "--out", (dir / "data").string()});
  write_file_atomic(dir / "run.cfg", "model.widths = 8,16\nmodel.feature_channels = 16\nbatch_size = 4\n");
  for (const std::string mode : {"baseline", "dropclass"}) {
    if (status != 0) break;
    status = call({"train", "--config", (dir / "run.cfg").string(), "--data", (dir / "data" / "train").string(),
                   "--mode", mode, "--iterations", "40", "--seed", "8", "--threads", "2", "--out",
                   (dir / mode).string()});
    if (status != 0) break;
    status = call({"replay", "--manifest", (dir / mode / "manifest.cfg").string(), "--out",
                   (dir / (mode + "_replay")).string()});
    if (status != 0) break;
    if (read_file(dir / mode / "loss_trace.csv") != read_file(dir / (mode + "_replay") / "loss_trace.csv")) {
      return {false, mode + " loss trace differs after replay"};
    }
  }
  if (status != 0) return {false, "exit status " + std::to_string(status) + ": " + err.str()};
  return {true, "baseline and dropclass loss traces replayed bit-identically"};
}

// 9 -------------------------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> pick(0, 5);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    LabelMap pred(8, 8), lab(8, 8);
    for (Index i = 0; i < 64; ++i) {
      pred[i] = std::uint8_t(pick(rng));
      lab[i] = pick(rng) == 0 && trial % 2 ? LabelMap::kIgnore : std::uint8_t(pick(rng));
    }
    const std::vector<LabelMap> p{pred}, l{lab};
    const IoUReport r = iou_per_class(p, l, 6);
    for (int c = 0; c < 6; ++c) {
      std::set<Index> in_pred, in_lab, both, any;
      for (Index i = 0; i < 64; ++i) {
        if (lab[i] == LabelMap::kIgnore) continue;
        if (pred[i] == c) in_pred.insert(i), any.insert(i);
        if (lab[i] == c) in_lab.insert(i), any.insert(i);
        if (pred[i] == c && lab[i] == c) both.insert(i);
      }
      const std::optional<double> oracle =
          any.empty() ? std::nullopt : std::optional<double>(double(both.size()) / double(any.size()));
      if (r.iou[std::size_t(c)] != oracle) ++mismatches;
    }
  }
  const Dataset d = generate_dataset(default_scene_spec(), 60, 2'000'000, Split::test);
  const Predictor copier = [](const Sample& s) {
    LabelMap out = s.label;
    for (auto& v : out.data)
      if (v == LabelMap::kIgnore) v = 0;
    return out;
  };
  const ErasureReport er = erasure_benchmark(copier, d);
  double worst = 0;
  for (const auto& e : er.entries)
    if (e.delta) worst = std::max(worst, std::abs(*e.delta));
  const bool ok = mismatches == 0 && worst == 0.0;
  return {ok, std::to_string(mismatches) + " IoU mismatches over 100 random pairs; label-copying max |delta| " +
                  format_double(worst)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  fs::path work = fs::temp_directory_path() / "dropclass_acceptance";
  int seeds = 3;
  std::vector<int> only;
  app.add_option("--work-dir", work, "Scratch directory for runs and summaries");
  app.add_option("--seeds", seeds, "Training seeds for the directional criteria")->check(CLI::PositiveNumber);
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  int failures = 0;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << o.detail << std::endl;
    if (!o.pass) ++failures;
  };
  auto guarded = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    try {
      report(id, name, fn());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "gradient integrity", gradient_integrity);
  guarded(2, "importance shortcut", importance_shortcut);
  guarded(3, "loss equations", loss_equations);
  guarded(4, "drop class uniformity", drop_uniformity);
  if (wanted(5) || wanted(6) || wanted(7)) {
    std::optional<Experiments> ex;
    std::string error;
    try {
      std::cerr << "training " << seeds << " seeds of baseline, dropclass and both ablations\n";
      ex = run_experiments(seeds, work);
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto from = [&](int id, const std::string& name, Outcome (*fn)(const Experiments&)) {
      if (!wanted(id)) return;
      if (!ex) return report(id, name, {false, "training failed: " + error});
      report(id, name, fn(*ex));
    };
    from(5, "erasure direction", erasure_direction);
    from(6, "correlation direction", correlation_direction);
    from(7, "ablation structure", ablation_structure);
  }
  guarded(8, "replay determinism", [&] { return replay_determinism(work); });
  guarded(9, "metric oracles", metric_oracles);
  return failures == 0 ? 0 : 1;
}
