#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dropclass/trainer.hpp"

using namespace dropclass;

namespace {

// Two classes separable by the red channel of each pixel.
Dataset toy_dataset(Index n, std::uint64_t seed) {
  SceneSpec spec = default_scene_spec();
  spec.classes.resize(2);
  spec.classes[1].name = "thing";
  spec.rules.clear();
  spec.frequency_targets.clear();
  spec.image_size = 8;
  Dataset d;
  d.spec = spec;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (Index i = 0; i < n; ++i) {
    Sample s{Tensor({8, 8, 3}), LabelMap(8, 8), std::uint64_t(i)};
    for (Index p = 0; p < 64; ++p) {
      const bool on = u(rng) < 0.4f;
      s.label[p] = on ? 1 : 0;
      s.image.pixels()(p, 0) = on ? 0.8f + 0.2f * u(rng) : 0.2f * u(rng);
      s.image.pixels()(p, 1) = u(rng);
      s.image.pixels()(p, 2) = u(rng);
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

TrainConfig small_config(TrainMode mode, Index iterations) {
  TrainConfig c;
  c.mode = mode;
  c.iterations = iterations;
  c.batch_size = 4;
  c.model.widths = {4, 6};
  c.model.feature_channels = 6;
  c.seed = 3;
  return c;
}

std::vector<const Sample*> batch_of(const Dataset& d, Index n) {
  std::vector<const Sample*> out;
  for (Index i = 0; i < n; ++i) out.push_back(&d.samples[std::size_t(i)]);
  return out;
}

}  // namespace

TEST_CASE("sgd update") {
  SUBCASE("no momentum: fixed gradient lowers the parameter by lr * g per step") {
    Tensor p({1}, 1.f), v({1}), g({1}, 2.f);
    for (int i = 1; i <= 3; ++i) {
      sgd_update(p, g, 0.1, 0.0, v);
      CHECK(p[0] == doctest::Approx(1.0 - 0.2 * i).epsilon(1e-6));
    }
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p({3}, 0.7f), v({3});
    for (int i = 0; i < 10; ++i) sgd_update(p, Tensor({3}), 0.1, 0.9, v);
    CHECK(p == Tensor({3}, 0.7f));
  }
  SUBCASE("quadratic bowl converges") {
    Tensor p({1}, 1.f), v({1});
    for (int i = 0; i < 300; ++i) sgd_update(p, Tensor({1}, 2.f * p[0]), 0.1, 0.9, v);
    CHECK(std::abs(p[0]) < 1e-3);
  }
  SUBCASE("shape mismatch") {
    Tensor p({2}), v({2});
    CHECK_THROWS_AS(sgd_update(p, Tensor({3}), 0.1, 0.9, v), DimensionError);
  }
}

TEST_CASE("config parsing and defaults") {
  KeyValues kv;
  kv.set("mode", "dropclass");
  CHECK(TrainConfig::from_keyvalues(kv).iterations == 6000);
  kv.set("mode", "baseline");
  CHECK(TrainConfig::from_keyvalues(kv).iterations == 3000);
  const TrainConfig c = TrainConfig::from_keyvalues(kv);
  CHECK(c.batch_size == 8);
  CHECK(c.learning_rate == 0.05);
  CHECK(c.momentum == 0.9);
  CHECK(c.alpha == 10.0);
  TrainConfig custom = small_config(TrainMode::no_suppression, 17);
  custom.resample_class = 4;
  custom.reweight = true;
  const TrainConfig back = TrainConfig::from_keyvalues(custom.to_keyvalues());
  CHECK(back.to_keyvalues() == custom.to_keyvalues());
  CHECK(back.resample_class == 4);
  kv.set("iterations", std::int64_t(0));
  CHECK_THROWS_AS(TrainConfig::from_keyvalues(kv), ContractError);
  kv.set("iterations", std::int64_t(10));
  kv.set("learning_rate", 0.0);
  CHECK_THROWS_AS(TrainConfig::from_keyvalues(kv), ContractError);
}

TEST_CASE("zero learning rate leaves parameters unchanged but reports losses") {
  const Dataset d = toy_dataset(8, 1);
  TrainConfig cfg = small_config(TrainMode::dropclass, 10);
  cfg.model.num_classes = 2;
  Model m = init_model(cfg.model, 1);
  const Model before = m;
  SgdMomentum opt(0.9);
  Rng rng(1);
  const auto batch = batch_of(d, 4);
  const auto r = train_step(m, opt, batch, Schedule{0.5, 1.0}, cfg, rng, unit_class_weights(2), 0.0);
  CHECK(m == before);
  CHECK(r.loss.l_total > 0);
  CHECK(r.z.has_value());
}

TEST_CASE("dropclass at the start of the ramp equals plain cross-entropy") {
  const Dataset d = toy_dataset(8, 2);
  TrainConfig cfg = small_config(TrainMode::dropclass, 10);
  cfg.model.num_classes = 2;
  Model m = init_model(cfg.model, 2);
  SgdMomentum opt(0.9);
  Rng rng(2);
  const auto r = train_step(m, opt, batch_of(d, 4), schedule_at(0, 10), cfg, rng, unit_class_weights(2), 0.01);
  CHECK_FALSE(r.z.has_value());
  CHECK(r.loss.l_total == r.loss.l_ce);
  CHECK(r.loss.l_sup == 0.0);
}

TEST_CASE("frozen ramp reproduces the baseline trajectory") {
  const Dataset d = toy_dataset(16, 3);
  TrainConfig base = small_config(TrainMode::baseline, 10);
  base.model.num_classes = 2;
  TrainConfig drop = base;
  drop.mode = TrainMode::dropclass;
  Model mb = init_model(base.model, 3), md = mb;
  SgdMomentum ob(0.9), od(0.9);
  Rng rb(4), rd(4);
  for (Index t = 0; t < 12; ++t) {
    std::vector<const Sample*> batch;
    for (Index i = 0; i < 4; ++i) batch.push_back(&d.samples[std::size_t((4 * t + i) % 16)]);
    const auto lb = train_step(mb, ob, batch, Schedule{0, 0}, base, rb, unit_class_weights(2), 0.05);
    const auto ld = train_step(md, od, batch, Schedule{0, 0}, drop, rd, unit_class_weights(2), 0.05);
    CHECK(lb.loss.l_total == ld.loss.l_total);
  }
  CHECK(mb.extractor == md.extractor);
  CHECK(mb.classifier == md.classifier);
}

TEST_CASE("single-iteration run") {
  const TrainReport r = train(toy_dataset(4, 5), small_config(TrainMode::dropclass, 1));
  CHECK(r.trace.size() == 1);
  CHECK(r.drawn_classes().size() == 1);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const Dataset d = toy_dataset(12, 6);
  for (auto mode : {TrainMode::baseline, TrainMode::dropclass}) {
    const TrainConfig cfg = small_config(mode, 25);
    const TrainReport a = train(d, cfg), b = train(d, cfg);
    REQUIRE(a.trace.size() == 25);
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].loss == b.trace[i].loss);
      CHECK(a.trace[i].z == b.trace[i].z);
    }
    CHECK(a.model == b.model);
    CHECK(loss_trace_csv(a.trace) == loss_trace_csv(b.trace));
  }
}

TEST_CASE("thread count does not change results") {
  const Dataset d = toy_dataset(12, 7);
  TrainConfig cfg = small_config(TrainMode::dropclass, 15);
  const TrainReport one = train(d, cfg);
  cfg.threads = 3;
  const TrainReport three = train(d, cfg);
  CHECK(loss_trace_csv(one.trace) == loss_trace_csv(three.trace));
  CHECK(one.model == three.model);
}

TEST_CASE("baseline learns a separable toy problem") {
  const Dataset d = toy_dataset(200, 8);
  TrainConfig cfg = small_config(TrainMode::baseline, 500);
  cfg.batch_size = 8;
  const TrainReport r = train(d, cfg);
  const double first = r.trace.front().loss.l_ce, last = r.trace.back().loss.l_ce;
  INFO("initial ", first, " final ", last);
  CHECK(last < 0.1 * first);
}

TEST_CASE("mode contracts hold every step") {
  const Dataset d = toy_dataset(12, 9);
  SUBCASE("no suppression") {
    const TrainReport r = train(d, small_config(TrainMode::no_suppression, 40));
    bool any_sup = false;
    for (const auto& s : r.trace) {
      CHECK(s.loss.l_total == s.loss.l_seg);
      any_sup = any_sup || s.loss.l_sup > 0;
    }
    CHECK(any_sup);
  }
  SUBCASE("label drop") {
    const TrainReport r = train(d, small_config(TrainMode::label_drop, 40));
    int drawn = 0;
    for (const auto& s : r.trace) {
      drawn += s.z.has_value();
      CHECK(s.loss.l_total == s.loss.l_ce_drop);
      CHECK(s.loss.l_sup == 0.0);
      if (!s.z) CHECK(s.loss.l_ce_drop == doctest::Approx(s.loss.l_ce).epsilon(1e-6));
    }
    CHECK(drawn > 5);
  }
  SUBCASE("dropclass") {
    const TrainReport r = train(d, small_config(TrainMode::dropclass, 40));
    for (const auto& s : r.trace) {
      CHECK(std::abs(s.loss.l_total - (s.loss.l_seg + 10.0 * s.loss.l_sup)) <= 1e-6);
      CHECK(std::abs(s.loss.l_seg - ((1 - s.lambda) * s.loss.l_ce + s.lambda * s.loss.l_ce_drop)) <= 1e-6);
      if (!s.z) CHECK(s.loss.l_sup == 0.0);
    }
  }
  SUBCASE("baseline never draws") {
    const TrainReport r = train(d, small_config(TrainMode::baseline, 20));
    for (const auto& s : r.trace) CHECK_FALSE(s.z.has_value());
  }
}

TEST_CASE("reweighting and resampling") {
  const Dataset d = toy_dataset(12, 10);
  TrainConfig cfg = small_config(TrainMode::baseline, 3);
  cfg.reweight = true;
  const TrainReport r = train(d, cfg);
  CHECK(r.class_weights == median_frequency_weights(pixel_frequencies(d)));
  cfg.reweight = false;
  cfg.resample_class = 1;
  CHECK(train(d, cfg).trace.size() == 3);
}

TEST_CASE("non-finite values abort with a diagnostic dump") {
  Dataset d = toy_dataset(4, 11);
  for (auto& s : d.samples) s.image.vec().setConstant(3e38f);
  TrainConfig cfg = small_config(TrainMode::baseline, 2);
  cfg.dump_dir = std::filesystem::temp_directory_path() / "dropclass_trainer_dump";
  std::filesystem::remove_all(cfg.dump_dir);
  try {
    train(d, cfg);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration 0") != std::string::npos);
    CHECK(msg.find("sample seeds") != std::string::npos);
  }
  CHECK(std::filesystem::exists(cfg.dump_dir / "img_0.dct1"));
}

TEST_CASE("loss trace CSV layout") {
  const TrainReport r = train(toy_dataset(4, 12), small_config(TrainMode::dropclass, 3));
  const std::string csv = loss_trace_csv(r.trace);
  CHECK(csv.rfind("iteration,l_ce,l_ce_drop,l_seg,l_sup,l_total,lambda,p_drop,z\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
