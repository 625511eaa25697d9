#include "dropclass/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <sstream>

#include "dropclass/tensor_io.hpp"

namespace dropclass {
namespace {

constexpr int kMaxPlacementAttempts = 100;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Box {
  Index top, left, bottom, right;  // half-open [top, bottom) x [left, right)

  Index height() const { return bottom - top; }
  Index width() const { return right - left; }
  double center_x() const { return 0.5 * double(left + right); }
  double center_y() const { return 0.5 * double(top + bottom); }
  bool intersects(const Box& o) const {
    return top < o.bottom && o.top < bottom && left < o.right && o.left < right;
  }
};

struct Placed {
  int cls;
  Box box;
  bool band;
};

std::string shape_name(ShapeFamily s) {
  switch (s) {
    case ShapeFamily::band:
      return "band";
    case ShapeFamily::rectangle:
      return "rectangle";
    case ShapeFamily::disc:
      return "disc";
  }
  return "?";
}

ShapeFamily parse_shape(const std::string& s) {
  if (s == "band") return ShapeFamily::band;
  if (s == "rectangle") return ShapeFamily::rectangle;
  if (s == "disc") return ShapeFamily::disc;
  throw FormatError("datagen", "unknown shape family '" + s + "'");
}

std::string relation_name(Relation r) {
  switch (r) {
    case Relation::above:
      return "above";
    case Relation::overlapping:
      return "overlapping";
    case Relation::adjacent:
      return "adjacent";
  }
  return "?";
}

Relation parse_relation(const std::string& s) {
  if (s == "above") return Relation::above;
  if (s == "overlapping") return Relation::overlapping;
  if (s == "adjacent") return Relation::adjacent;
  throw FormatError("datagen", "unknown spatial relation '" + s + "'");
}

std::string color_string(const Color& c) {
  return format_double(c[0]) + "," + format_double(c[1]) + "," + format_double(c[2]);
}

class SceneBuilder {
 public:
  SceneBuilder(const SceneSpec& spec, std::uint64_t seed)
      : spec_(spec), rng_(splitmix64(seed)), size_(spec.image_size), label_(size_, size_, std::uint8_t(spec.background)),
        colors_(static_cast<std::size_t>(size_ * size_), spec.classes[static_cast<std::size_t>(spec.background)].color) {}

  Sample build(std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(spec_.num_classes());
    std::vector<bool> present(n, false);
    for (std::size_t c = 0; c < n; ++c) {
      present[c] = int(c) == spec_.background || bernoulli(spec_.classes[c].presence);
    }
    std::vector<int> bound_rule(n, -1);
    for (std::size_t r = 0; r < spec_.rules.size(); ++r) {
      const auto& rule = spec_.rules[r];
      if (!present[static_cast<std::size_t>(rule.subject)]) continue;
      if (bernoulli(rule.rho)) {
        bound_rule[static_cast<std::size_t>(rule.subject)] = int(r);
        present[static_cast<std::size_t>(rule.companion)] = true;
      } else {
        present[static_cast<std::size_t>(rule.companion)] = false;
      }
    }
    // Companions must exist before their subjects are placed.
    std::vector<int> order;
    std::vector<bool> queued(n, false);
    std::function<void(int)> visit = [&](int c) {
      if (queued[static_cast<std::size_t>(c)]) return;
      queued[static_cast<std::size_t>(c)] = true;
      const int r = bound_rule[static_cast<std::size_t>(c)];
      if (r >= 0) visit(spec_.rules[static_cast<std::size_t>(r)].companion);
      order.push_back(c);
    };
    for (std::size_t c = 0; c < n; ++c) {
      if (present[c] && int(c) != spec_.background) visit(int(c));
    }
    // Bands first so objects are painted over them.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return (spec_.classes[static_cast<std::size_t>(a)].shape == ShapeFamily::band) >
             (spec_.classes[static_cast<std::size_t>(b)].shape == ShapeFamily::band);
    });
    for (int c : order) place_class(c, bound_rule[static_cast<std::size_t>(c)]);
    return finish(seed);
  }

 private:
  bool bernoulli(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  Index uniform_int(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng_); }

  Color instance_color(const ClassDescriptor& d) {
    Color c = d.color;
    for (auto& v : c) v = std::clamp(v + uniform(-d.jitter, d.jitter), 0.0, 1.0);
    return c;
  }

  void place_class(int c, int rule_index) {
    const auto& d = spec_.classes[static_cast<std::size_t>(c)];
    if (d.shape == ShapeFamily::band) {
      const Index h = std::clamp<Index>(Index(std::lround(uniform(d.size_min, d.size_max) * double(size_))), 1, size_);
      const Box box = d.anchor == BandAnchor::top ? Box{0, 0, h, size_} : Box{size_ - h, 0, size_, size_};
      paint(c, box, d.shape, instance_color(d));
      placed_.push_back({c, box, true});
      return;
    }
    const Index count = uniform_int(1, std::max(1, d.max_instances));
    for (Index i = 0; i < count; ++i) {
      bool ok = false;
      for (int attempt = 0; attempt < kMaxPlacementAttempts && !ok; ++attempt) {
        const double s = uniform(d.size_min, d.size_max);
        Index bw, bh;
        if (d.shape == ShapeFamily::disc) {
          bw = bh = 2 * Index(std::lround(s)) + 1;
        } else {
          bw = std::max<Index>(1, std::lround(s));
          bh = std::max<Index>(1, std::lround(s * d.aspect));
        }
        std::optional<Box> box;
        const Placed* companion = nullptr;
        if (rule_index >= 0) {
          const auto& rule = spec_.rules[static_cast<std::size_t>(rule_index)];
          std::vector<const Placed*> candidates;
          for (const auto& p : placed_) {
            if (p.cls == rule.companion) candidates.push_back(&p);
          }
          if (candidates.empty()) break;
          companion = candidates[static_cast<std::size_t>(uniform_int(0, Index(candidates.size()) - 1))];
          box = relative_box(rule.relation, companion->box, companion->band, bw, bh);
        } else {
          const double cy = uniform(d.place_lo, d.place_hi) * double(size_);
          const Index top = Index(std::lround(cy - 0.5 * double(bh)));
          const Index left = uniform_int(0, size_ - bw);
          box = Box{top, left, top + bh, left + bw};
        }
        if (!box || !inside(*box) || collides(*box, companion)) continue;
        paint(c, *box, d.shape, instance_color(d));
        placed_.push_back({c, *box, false});
        ok = true;
      }
      if (!ok) {
        if (rule_index >= 0) {
          const auto& rule = spec_.rules[static_cast<std::size_t>(rule_index)];
          throw GenerationError("datagen", "infeasible layout for rule (" +
                                               spec_.classes[static_cast<std::size_t>(rule.subject)].name + " " +
                                               relation_name(rule.relation) + " " +
                                               spec_.classes[static_cast<std::size_t>(rule.companion)].name + ") after " +
                                               std::to_string(kMaxPlacementAttempts) + " attempts");
        }
        throw GenerationError("datagen", "infeasible layout for class " + d.name + " after " +
                                             std::to_string(kMaxPlacementAttempts) + " attempts");
      }
    }
  }

  std::optional<Box> relative_box(Relation relation, const Box& comp, bool comp_is_band, Index bw, Index bh) {
    switch (relation) {
      case Relation::above: {
        const Index overlap = uniform_int(0, bh / 4);
        const Index bottom = comp.top + overlap;
        Index left;
        if (comp_is_band) {
          left = uniform_int(0, size_ - bw);
        } else {
          const double jitter = 0.25 * double(comp.width());
          left = Index(std::lround(comp.center_x() + uniform(-jitter, jitter) - 0.5 * double(bw)));
        }
        return Box{bottom - bh, left, bottom, left + bw};
      }
      case Relation::overlapping: {
        const double cy = uniform(double(comp.top), double(comp.bottom));
        const double cx = uniform(double(comp.left), double(comp.right));
        const Index top = Index(std::lround(cy - 0.5 * double(bh)));
        const Index left = Index(std::lround(cx - 0.5 * double(bw)));
        return Box{top, left, top + bh, left + bw};
      }
      case Relation::adjacent: {
        const Index top = Index(std::lround(comp.center_y() - 0.5 * double(bh)));
        const Index left = bernoulli(0.5) ? comp.left - bw : comp.right;
        return Box{top, left, top + bh, left + bw};
      }
    }
    return std::nullopt;
  }

  bool inside(const Box& b) const { return b.top >= 0 && b.left >= 0 && b.bottom <= size_ && b.right <= size_; }

  bool collides(const Box& b, const Placed* companion) const {
    for (const auto& p : placed_) {
      if (p.band || &p == companion) continue;
      if (p.box.intersects(b)) return true;
    }
    return false;
  }

  void paint(int c, const Box& box, ShapeFamily shape, const Color& color) {
    const double cy = 0.5 * double(box.top + box.bottom - 1);
    const double cx = 0.5 * double(box.left + box.right - 1);
    const double r = 0.5 * double(box.width() - 1) + 0.5;
    for (Index i = std::max<Index>(box.top, 0); i < std::min(box.bottom, size_); ++i) {
      for (Index j = std::max<Index>(box.left, 0); j < std::min(box.right, size_); ++j) {
        if (shape == ShapeFamily::disc) {
          const double dy = double(i) - cy, dx = double(j) - cx;
          if (dy * dy + dx * dx > r * r) continue;
        }
        label_(i, j) = std::uint8_t(c);
        colors_[static_cast<std::size_t>(i * size_ + j)] = color;
      }
    }
  }

  Sample finish(std::uint64_t seed) {
    Sample s;
    s.seed = seed;
    s.label = std::move(label_);
    s.image = Tensor(Shape{size_, size_, 3});
    std::normal_distribution<double> noise(0.0, spec_.pixel_noise);
    for (Index p = 0; p < size_ * size_; ++p) {
      for (Index ch = 0; ch < 3; ++ch) {
        const double v = colors_[static_cast<std::size_t>(p)][static_cast<std::size_t>(ch)] +
                         (spec_.pixel_noise > 0 ? noise(rng_) : 0.0);
        s.image[p * 3 + ch] = float(std::clamp(v, 0.0, 1.0));
      }
    }
    return s;
  }

  const SceneSpec& spec_;
  std::mt19937_64 rng_;
  Index size_;
  LabelMap label_;
  std::vector<Color> colors_;
  std::vector<Placed> placed_;
};

}  // namespace

int SceneSpec::class_index(const std::string& name) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].name == name) return int(i);
  }
  throw ContractError("datagen", "unknown class '" + name + "'");
}

void SceneSpec::validate() const {
  if (image_size < 4) throw ContractError("datagen", "image_size must be at least 4");
  if (classes.empty() || classes.size() > 255) throw ContractError("datagen", "class count must be in [1, 255]");
  if (background < 0 || background >= num_classes()) throw ContractError("datagen", "background index out of range");
  for (const auto& c : classes) {
    if (!(c.size_min > 0 && c.size_min <= c.size_max)) {
      throw ContractError("datagen", "class " + c.name + ": need 0 < size_min <= size_max");
    }
    if (!(c.presence >= 0 && c.presence <= 1)) throw ContractError("datagen", "class " + c.name + ": presence not in [0,1]");
    if (c.shape == ShapeFamily::band && c.size_max > 1) {
      throw ContractError("datagen", "class " + c.name + ": band size is a fraction of the image height");
    }
  }
  for (const auto& r : rules) {
    if (r.subject < 0 || r.subject >= num_classes() || r.companion < 0 || r.companion >= num_classes()) {
      throw ContractError("datagen", "co-occurrence rule references a class that does not exist");
    }
    if (r.subject == r.companion) throw ContractError("datagen", "co-occurrence rule pairs a class with itself");
    if (!(r.rho >= 0 && r.rho <= 1)) throw ContractError("datagen", "co-occurrence rho must lie in [0,1]");
  }
  if (!frequency_targets.empty()) {
    if (static_cast<Index>(frequency_targets.size()) != num_classes()) {
      throw ContractError("datagen", "one frequency target per class required");
    }
    double sum = 0;
    for (double f : frequency_targets) {
      if (f < 0) throw ContractError("datagen", "negative frequency target");
      sum += f;
    }
    if (sum > 1.01) throw ContractError("datagen", "frequency targets sum to more than 1");
  }
}

SceneSpec default_scene_spec() {
  SceneSpec spec;
  spec.image_size = 64;
  spec.background = 0;

  ClassDescriptor background{"background", ShapeFamily::rectangle};
  background.color = {0.55, 0.5, 0.45};
  background.jitter = 0.08;

  ClassDescriptor sky{"sky", ShapeFamily::band, BandAnchor::top, 0.15, 0.3};
  sky.color = {0.55, 0.75, 0.95};
  sky.jitter = 0.05;

  ClassDescriptor road{"road", ShapeFamily::band, BandAnchor::bottom, 0.38, 0.5};
  road.color = {0.3, 0.3, 0.33};
  road.jitter = 0.05;

  ClassDescriptor car{"car", ShapeFamily::rectangle, BandAnchor::top, 8, 14, 0.55};
  car.color = {0.8, 0.2, 0.2};
  car.jitter = 0.08;
  car.presence = 0.9;
  car.max_instances = 2;

  ClassDescriptor bike{"bike", ShapeFamily::disc, BandAnchor::top, 2, 3.5};
  bike.color = {0.2, 0.6, 0.3};
  bike.jitter = 0.06;
  bike.presence = 0.3;
  bike.place_lo = 0.72;
  bike.place_hi = 0.92;

  ClassDescriptor rider{"rider", ShapeFamily::rectangle, BandAnchor::top, 3, 5, 1.6};
  rider.color = {0.75, 0.3, 0.25};
  rider.jitter = 0.08;
  rider.presence = 0.3;

  spec.classes = {background, sky, road, car, bike, rider};
  spec.rules = {{5, 4, 1.0, Relation::above}, {3, 2, 1.0, Relation::above}};
  spec.frequency_targets = {0.316, 0.224, 0.433, 0.022, 0.0038, 0.0018};
  return spec;
}

KeyValues SceneSpec::to_keyvalues() const {
  KeyValues kv;
  kv.set("image_size", std::int64_t(image_size));
  kv.set("background", background);
  kv.set("pixel_noise", pixel_noise);
  kv.set("num_classes", std::int64_t(num_classes()));
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& c = classes[i];
    const std::string p = "class." + std::to_string(i) + ".";
    kv.set(p + "name", c.name);
    kv.set(p + "shape", shape_name(c.shape));
    kv.set(p + "anchor", c.anchor == BandAnchor::top ? "top" : "bottom");
    kv.set(p + "size_min", c.size_min);
    kv.set(p + "size_max", c.size_max);
    kv.set(p + "aspect", c.aspect);
    kv.set(p + "color", color_string(c.color));
    kv.set(p + "jitter", c.jitter);
    kv.set(p + "presence", c.presence);
    kv.set(p + "max_instances", c.max_instances);
    kv.set(p + "place_lo", c.place_lo);
    kv.set(p + "place_hi", c.place_hi);
  }
  kv.set("num_rules", std::int64_t(rules.size()));
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const std::string p = "rule." + std::to_string(i) + ".";
    kv.set(p + "subject", classes[static_cast<std::size_t>(rules[i].subject)].name);
    kv.set(p + "companion", classes[static_cast<std::size_t>(rules[i].companion)].name);
    kv.set(p + "rho", rules[i].rho);
    kv.set(p + "relation", relation_name(rules[i].relation));
  }
  if (!frequency_targets.empty()) {
    std::string f;
    for (std::size_t i = 0; i < frequency_targets.size(); ++i) f += (i ? "," : "") + format_double(frequency_targets[i]);
    kv.set("frequency_targets", f);
  }
  return kv;
}

SceneSpec SceneSpec::from_keyvalues(const KeyValues& kv) {
  // Keys that are absent fall back to the default benchmark.
  SceneSpec spec = default_scene_spec();
  spec.image_size = kv.get_int("image_size", spec.image_size);
  spec.pixel_noise = kv.get_double("pixel_noise", spec.pixel_noise);
  const Index n = kv.get_int("num_classes", spec.num_classes());
  if (n != spec.num_classes()) {
    spec.classes.assign(static_cast<std::size_t>(n), ClassDescriptor{});
    spec.rules.clear();
    spec.frequency_targets.clear();
  }
  for (Index i = 0; i < n; ++i) {
    auto& c = spec.classes[static_cast<std::size_t>(i)];
    const std::string p = "class." + std::to_string(i) + ".";
    c.name = kv.get_string(p + "name", c.name.empty() ? "class" + std::to_string(i) : c.name);
    c.shape = parse_shape(kv.get_string(p + "shape", shape_name(c.shape)));
    c.anchor = kv.get_string(p + "anchor", c.anchor == BandAnchor::top ? "top" : "bottom") == "bottom"
                   ? BandAnchor::bottom
                   : BandAnchor::top;
    c.size_min = kv.get_double(p + "size_min", c.size_min);
    c.size_max = kv.get_double(p + "size_max", c.size_max);
    c.aspect = kv.get_double(p + "aspect", c.aspect);
    if (kv.has(p + "color")) {
      auto col = kv.get_double_list(p + "color");
      if (col.size() != 3) throw FormatError("datagen", p + "color needs three components");
      c.color = {col[0], col[1], col[2]};
    }
    c.jitter = kv.get_double(p + "jitter", c.jitter);
    c.presence = kv.get_double(p + "presence", c.presence);
    c.max_instances = int(kv.get_int(p + "max_instances", c.max_instances));
    c.place_lo = kv.get_double(p + "place_lo", c.place_lo);
    c.place_hi = kv.get_double(p + "place_hi", c.place_hi);
  }
  spec.background = int(kv.get_int("background", spec.background));
  if (kv.has("num_rules")) {
    spec.rules.assign(static_cast<std::size_t>(kv.get_int("num_rules")), CooccurrenceRule{});
    for (std::size_t i = 0; i < spec.rules.size(); ++i) {
      const std::string p = "rule." + std::to_string(i) + ".";
      spec.rules[i].subject = spec.class_index(kv.get_string(p + "subject"));
      spec.rules[i].companion = spec.class_index(kv.get_string(p + "companion"));
      spec.rules[i].rho = kv.get_double(p + "rho");
      spec.rules[i].relation = parse_relation(kv.get_string(p + "relation", "above"));
    }
  }
  for (std::size_t i = 0; i < spec.rules.size(); ++i) {
    const std::string p = "rule." + std::to_string(i) + ".";
    if (kv.has(p + "rho")) spec.rules[i].rho = kv.get_double(p + "rho");
  }
  if (kv.has("frequency_targets")) spec.frequency_targets = kv.get_double_list("frequency_targets");
  spec.validate();
  return spec;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ContractError("datagen", "unknown split '" + name + "'");
}

Sample generate_sample(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  return SceneBuilder(spec, seed).build(seed);
}

Dataset generate_dataset(const SceneSpec& spec, Index n, std::uint64_t base_seed, Split split) {
  if (n < 1) throw ContractError("datagen", "dataset size must be at least 1");
  Dataset ds;
  ds.spec = spec;
  ds.split = split;
  ds.samples.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) ds.samples.push_back(generate_sample(spec, base_seed + std::uint64_t(i)));
  return ds;
}

std::vector<double> pixel_frequencies(std::span<const LabelMap> labels, Index num_classes) {
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  double total = 0;
  for (const auto& l : labels) {
    for (auto v : l.data) {
      if (v == LabelMap::kIgnore) continue;
      if (v >= num_classes) throw ContractError("datagen", "label out of range");
      counts[v] += 1;
      total += 1;
    }
  }
  if (total == 0) throw ContractError("datagen", "pixel_frequencies: no labelled pixels");
  for (auto& c : counts) c /= total;
  return counts;
}

std::vector<double> pixel_frequencies(const Dataset& dataset) {
  if (dataset.samples.empty()) throw ContractError("datagen", "pixel_frequencies of an empty dataset");
  std::vector<LabelMap> labels;
  labels.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) labels.push_back(s.label);
  return pixel_frequencies(labels, dataset.spec.num_classes());
}

std::vector<double> median_frequency_weights(std::span<const double> frequencies) {
  if (frequencies.empty()) throw ContractError("datagen", "median_frequency_weights of no classes");
  for (std::size_t c = 0; c < frequencies.size(); ++c) {
    if (!(frequencies[c] > 0)) {
      throw ContractError("datagen", "class " + std::to_string(c) + " has zero frequency (absent from training data)");
    }
  }
  std::vector<double> sorted(frequencies.begin(), frequencies.end());
  std::sort(sorted.begin(), sorted.end());
  // Lower median, so the median-frequency class gets weight exactly 1.
  const double median = sorted[(sorted.size() - 1) / 2];
  std::vector<double> w;
  for (double f : frequencies) w.push_back(median / f);
  return w;
}

Color mean_color(const Dataset& dataset) {
  Color sum{0, 0, 0};
  double n = 0;
  for (const auto& s : dataset.samples) {
    auto px = s.image.pixels();
    for (Index ch = 0; ch < 3; ++ch) sum[static_cast<std::size_t>(ch)] += px.col(ch).template cast<double>().sum();
    n += double(px.rows());
  }
  if (n == 0) throw ContractError("datagen", "mean colour of an empty dataset");
  for (auto& v : sum) v /= n;
  return sum;
}

Sample erase_class(const Sample& sample, int c, const Color& fill) {
  Sample out = sample;
  for (Index p = 0; p < out.label.size(); ++p) {
    if (out.label[p] != c) continue;
    out.label[p] = LabelMap::kIgnore;
    for (Index ch = 0; ch < 3; ++ch) out.image[p * 3 + ch] = float(fill[static_cast<std::size_t>(ch)]);
  }
  return out;
}

Dataset erase_class(const Dataset& dataset, int c) {
  if (c < 0 || c >= dataset.spec.num_classes()) throw ContractError("datagen", "erase_class: class out of range");
  const Color fill = mean_color(dataset);
  Dataset out;
  out.spec = dataset.spec;
  out.split = dataset.split;
  for (const auto& s : dataset.samples) out.samples.push_back(erase_class(s, c, fill));
  return out;
}

Dataset resample_with_duplication(const Dataset& dataset, int c) {
  if (c < 0 || c >= dataset.spec.num_classes()) {
    throw ContractError("datagen", "resample_with_duplication: class out of range");
  }
  Dataset out;
  out.spec = dataset.spec;
  out.split = dataset.split;
  for (const auto& s : dataset.samples) {
    out.samples.push_back(s);
    if (s.label.contains(c)) out.samples.push_back(s);
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValues kv;
  kv.merge(dataset.spec.to_keyvalues(), "scene.");
  kv.set("split", to_string(dataset.split));
  kv.set("samples", std::int64_t(dataset.size()));
  std::string seeds;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    seeds += (i ? "," : "") + std::to_string(dataset.samples[i].seed);
    save_tensor(dir / ("img_" + std::to_string(i) + ".dct1"), dataset.samples[i].image);
    save_labels(dir / ("lab_" + std::to_string(i) + ".dcl1"), dataset.samples[i].label);
  }
  kv.set("seeds", seeds);
  write_file_atomic(dir / "scene.cfg", kv.serialize());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const KeyValues kv = KeyValues::load(dir / "scene.cfg");
  Dataset ds;
  ds.spec = SceneSpec::from_keyvalues(kv.with_prefix("scene."));
  ds.split = parse_split(kv.get_string("split", "train"));
  const Index n = kv.get_int("samples");
  const auto seeds = kv.get_int_list("seeds", {});
  for (Index i = 0; i < n; ++i) {
    Sample s;
    s.image = load_tensor(dir / ("img_" + std::to_string(i) + ".dct1"));
    s.label = load_labels(dir / ("lab_" + std::to_string(i) + ".dcl1"));
    s.seed = i < Index(seeds.size()) ? std::uint64_t(seeds[static_cast<std::size_t>(i)]) : 0;
    if (s.image.rank() != 3 || s.image.dim(0) != s.label.height || s.image.dim(1) != s.label.width) {
      throw FormatError("datagen", "sample " + std::to_string(i) + " image and label shapes differ");
    }
    require_labels_in_range(s.label, ds.spec.num_classes(), "datagen");
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw FormatError("datagen", "dataset in " + dir.string() + " is empty");
  return ds;
}

}  // namespace dropclass
