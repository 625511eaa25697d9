#include "dropclass/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "dropclass/dropclass.hpp"
#include "dropclass/tensor_io.hpp"

namespace dropclass {
namespace {

struct Counts {
  std::vector<Index> intersection, uni;

  explicit Counts(Index c) : intersection(std::size_t(c), 0), uni(std::size_t(c), 0) {}

  void add(const LabelMap& pred, const LabelMap& label) {
    if (pred.height != label.height || pred.width != label.width) {
      throw DimensionError("eval", "prediction and label sizes differ");
    }
    const Index c = Index(uni.size());
    for (Index p = 0; p < label.size(); ++p) {
      const auto y = label[p];
      if (y == LabelMap::kIgnore) continue;
      const auto q = pred[p];
      if (y >= c || q >= c) throw ContractError("eval", "label outside the class range");
      if (y == q) {
        ++intersection[y];
        ++uni[y];
      } else {
        ++uni[y];
        ++uni[q];
      }
    }
  }

  std::optional<double> iou(int c) const {
    if (uni[c] == 0) return std::nullopt;
    return double(intersection[c]) / double(uni[c]);
  }
};

std::optional<double> mean_of(const std::vector<std::optional<double>>& values, std::span<const int> classes) {
  double s = 0;
  int n = 0;
  for (int c : classes) {
    if (values[c]) {
      s += *values[c];
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

std::vector<int> all_classes(Index c) {
  std::vector<int> v(static_cast<std::size_t>(c));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

IoUReport report_from(const Counts& counts, std::span<const double> frequencies) {
  const Index c = Index(counts.uni.size());
  IoUReport r;
  for (int k = 0; k < c; ++k) r.iou.push_back(counts.iou(k));
  r.miou = mean_of(r.iou, all_classes(c)).value_or(0.0);
  if (!frequencies.empty()) {
    if (Index(frequencies.size()) != c) throw DimensionError("eval", "frequency count does not match classes");
    r.rare_classes = rarest_classes(frequencies);
    r.miou_rare = mean_of(r.iou, r.rare_classes);
  }
  return r;
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

bool contains_class(const LabelMap& m, int c) { return m.contains(c); }

}  // namespace

LabelMap predict(const Model& model, const Tensor& image) {
  const Tensor logits = forward(model, image).logits;
  LabelMap out(logits.dim(0), logits.dim(1));
  const auto px = logits.pixels();
  for (Index p = 0; p < px.rows(); ++p) {
    Index arg = 0;
    px.row(p).maxCoeff(&arg);
    out.data[std::size_t(p)] = std::uint8_t(arg);
  }
  return out;
}

Predictor model_predictor(const Model& model) {
  return [model](const Sample& s) { return predict(model, s.image); };
}

std::vector<int> rarest_classes(std::span<const double> frequencies) {
  std::vector<int> idx = all_classes(Index(frequencies.size()));
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return frequencies[a] < frequencies[b]; });
  idx.resize(frequencies.size() / 2);
  std::sort(idx.begin(), idx.end());
  return idx;
}

IoUReport iou_per_class(std::span<const LabelMap> predictions, std::span<const LabelMap> labels, Index num_classes,
                        std::span<const double> frequencies) {
  if (predictions.size() != labels.size()) throw DimensionError("eval", "prediction and label counts differ");
  Counts counts(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) counts.add(predictions[i], labels[i]);
  return report_from(counts, frequencies);
}

IoUReport evaluate(const Predictor& predictor, const Dataset& dataset, std::span<const double> frequencies) {
  Counts counts(dataset.spec.num_classes());
  for (const auto& s : dataset.samples) counts.add(predictor(s), s.label);
  return report_from(counts, frequencies);
}

namespace {

ErasureReport run_erasure(const Predictor& predictor, const Dataset& dataset, const ErasureReference* given) {
  const Index c = dataset.spec.num_classes();
  if (c < 4) throw ProtocolError("eval", "the erasure benchmark needs at least 4 classes");
  if (given && (Index(given->eraser.size()) != c)) throw DimensionError("eval", "reference class count differs");

  std::vector<LabelMap> intact_pred;
  Counts intact(c);
  for (const auto& s : dataset.samples) {
    intact_pred.push_back(predictor(s));
    intact.add(intact_pred.back(), s.label);
  }

  const Color fill = mean_color(dataset);
  ErasureReport r;
  r.erased_iou = Eigen::MatrixXd::Constant(c, c, std::numeric_limits<double>::quiet_NaN());
  for (int x = 0; x < c; ++x) {
    // Samples without class x are unchanged by the erasure; reuse their predictions.
    Counts counts(c);
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      const Sample& s = dataset.samples[i];
      if (!contains_class(s.label, x)) {
        counts.add(intact_pred[i], s.label);
        continue;
      }
      const Sample erased = erase_class(s, x, fill);
      counts.add(predictor(erased), erased.label);
    }
    for (int y = 0; y < c; ++y) {
      if (auto v = counts.iou(y)) r.erased_iou(x, y) = *v;
    }
  }

  r.entries.resize(std::size_t(c));
  if (given) {
    r.reference = *given;
  } else {
    r.reference.eraser.assign(std::size_t(c), {-1, -1, -1});
  }
  for (int y = 0; y < c; ++y) {
    auto& e = r.entries[y];
    e.iou_intact = intact.iou(y);
    if (!given) {
      if (!e.iou_intact) continue;
      std::vector<std::pair<double, int>> drops;
      for (int x = 0; x < c; ++x) {
        if (x == y || std::isnan(r.erased_iou(x, y))) continue;
        drops.push_back({*e.iou_intact - r.erased_iou(x, y), x});
      }
      std::stable_sort(drops.begin(), drops.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      for (std::size_t k = 0; k < 3 && k < drops.size(); ++k) r.reference.eraser[y][k] = drops[k].second;
    }
    e.eraser = r.reference.eraser[y];
    double s = 0;
    int n = 0;
    for (int x : e.eraser) {
      if (x < 0 || std::isnan(r.erased_iou(x, y))) continue;
      s += r.erased_iou(x, y);
      ++n;
    }
    if (n > 0) e.iou_erased = s / n;
    if (e.iou_intact && e.iou_erased) e.delta = *e.iou_erased - *e.iou_intact;
  }

  if (!given) {
    std::vector<int> idx = all_classes(c);
    auto key = [&](int y) {
      return r.entries[y].delta ? *r.entries[y].delta : std::numeric_limits<double>::infinity();
    };
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return key(a) < key(b); });
    idx.resize(std::size_t(c / 2));
    std::sort(idx.begin(), idx.end());
    r.reference.vulnerable = idx;
  }

  std::vector<std::optional<double>> intact_v, erased_v;
  for (const auto& e : r.entries) {
    intact_v.push_back(e.iou_intact);
    erased_v.push_back(e.iou_erased);
  }
  const auto every = all_classes(c);
  r.miou_intact = mean_of(intact_v, every).value_or(0.0);
  r.miou_erased = mean_of(erased_v, every).value_or(0.0);
  r.miou_vulnerable_intact = mean_of(intact_v, r.reference.vulnerable);
  r.miou_vulnerable_erased = mean_of(erased_v, r.reference.vulnerable);
  return r;
}

}  // namespace

ErasureReport erasure_benchmark(const Predictor& predictor, const Dataset& dataset) {
  return run_erasure(predictor, dataset, nullptr);
}

ErasureReport erasure_benchmark(const Predictor& predictor, const Dataset& dataset,
                                const ErasureReference& reference) {
  return run_erasure(predictor, dataset, &reference);
}

CorrelationReport weight_correlation(const Model& model) {
  const Index c = model.config.num_classes;
  const Index k = model.config.feature_channels;
  Eigen::MatrixXd w(c, k);
  for (Index i = 0; i < c; ++i) {
    for (Index j = 0; j < k; ++j) w(i, j) = model.class_weight(i, j);
    if (w.row(i).norm() == 0.0) {
      throw NumericError("eval", "classifier row of class " + std::to_string(i) + " has zero norm");
    }
    w.row(i).normalize();
  }
  CorrelationReport r;
  r.cosine = w * w.transpose();
  r.row_sums = r.cosine.rowwise().sum() - r.cosine.diagonal();
  r.mean_row_sum = r.row_sums.mean();
  return r;
}

Tensor gradcam_map(const Model& model, const Tensor& image, int c) {
  if (c < 0 || c >= model.config.num_classes) throw ContractError("eval", "gradcam class out of range");
  const Tensor a = extract_features(model, image);
  const Tensor s = importance_map(model, a.dim(0), a.dim(1), c);
  const Tensor weighted = hadamard(a, s);
  Tensor out({a.dim(0), a.dim(1), 1}, 0.0f);
  out.pixels().col(0) = weighted.pixels().rowwise().sum().cwiseMax(0.0f);
  return out;
}

double mass_fraction(const Tensor& map, std::span<const bool> mask) {
  if (Index(mask.size()) != map.size()) throw DimensionError("eval", "mask size does not match the map");
  double inside = 0, total = 0;
  for (Index i = 0; i < map.size(); ++i) {
    total += map[i];
    if (mask[std::size_t(i)]) inside += map[i];
  }
  if (total <= 0) return 0.0;
  return inside / total;
}

void export_gradcam(const Tensor& map, const std::filesystem::path& prefix) {
  if (map.rank() != 3 || map.channels() != 1) throw DimensionError("eval", "gradcam map must be [h,w,1]");
  const Index h = map.dim(0), w = map.dim(1);
  const double peak = map.vec().maxCoeff();
  std::string pgm = "P2\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::string csv;
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const double v = map(i, j, 0);
      const int level = peak > 0 ? int(std::lround(255.0 * v / peak)) : 0;
      pgm += std::to_string(level) + (j + 1 < w ? " " : "\n");
      csv += format_double(v) + (j + 1 < w ? "," : "\n");
    }
  }
  auto with_ext = [&](const char* ext) {
    auto p = prefix;
    p += ext;
    return p;
  };
  write_file_atomic(with_ext(".pgm"), pgm);
  write_file_atomic(with_ext(".csv"), csv);
}

std::string iou_csv(const IoUReport& report, const SceneSpec& spec) {
  std::string out = "class,name,iou\n";
  for (std::size_t c = 0; c < report.iou.size(); ++c) {
    const std::string name = c < spec.classes.size() ? spec.classes[c].name : "";
    out += std::to_string(c) + "," + name + "," + opt(report.iou[c]) + "\n";
  }
  out += "mIoU,," + format_double(report.miou) + "\n";
  out += "mIoU_rare,," + opt(report.miou_rare) + "\n";
  return out;
}

std::string erasure_csv(const ErasureReport& report, const SceneSpec& spec) {
  std::string out = "class,name,eraser1,eraser2,eraser3,iou_intact,iou_erased,delta\n";
  for (std::size_t c = 0; c < report.entries.size(); ++c) {
    const auto& e = report.entries[c];
    const std::string name = c < spec.classes.size() ? spec.classes[c].name : "";
    out += std::to_string(c) + "," + name;
    for (int x : e.eraser) out += "," + std::to_string(x);
    out += "," + opt(e.iou_intact) + "," + opt(e.iou_erased) + "," + opt(e.delta) + "\n";
  }
  out += "mIoU,,,,," + format_double(report.miou_intact) + "," + format_double(report.miou_erased) + "," +
         format_double(report.miou_erased - report.miou_intact) + "\n";
  std::optional<double> d;
  if (report.miou_vulnerable_intact && report.miou_vulnerable_erased) {
    d = *report.miou_vulnerable_erased - *report.miou_vulnerable_intact;
  }
  out += "mIoU_vulnerable,,,,," + opt(report.miou_vulnerable_intact) + "," + opt(report.miou_vulnerable_erased) +
         "," + opt(d) + "\n";
  return out;
}

std::string correlation_csv(const CorrelationReport& report, const SceneSpec& spec) {
  const Index c = report.cosine.rows();
  auto name = [&](Index i) { return i < spec.num_classes() ? spec.classes[std::size_t(i)].name : std::to_string(i); };
  std::string out = "class";
  for (Index j = 0; j < c; ++j) out += "," + name(j);
  out += ",row_sum\n";
  for (Index i = 0; i < c; ++i) {
    out += name(i);
    for (Index j = 0; j < c; ++j) out += "," + format_double(report.cosine(i, j));
    out += "," + format_double(report.row_sums(i)) + "\n";
  }
  out += "mean_row_sum," + format_double(report.mean_row_sum) + "\n";
  return out;
}

}  // namespace dropclass
