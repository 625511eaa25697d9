#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dropclass/gradcheck.hpp"
#include "dropclass/model.hpp"
#include "dropclass/tensor_io.hpp"
#include "helpers.hpp"

using namespace dropclass;
using dropclass::testing::max_abs_diff;
using dropclass::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.widths = {4, 6};
  c.feature_channels = 6;
  c.num_classes = 3;
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "dropclass_model_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.feature_channels = 16;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = ModelConfig{};
  c.kernel_size = 4;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = ModelConfig{};
  c.widths = {8, 0, 32};
  CHECK_THROWS_AS(c.validate(), ContractError);
  CHECK(ModelConfig::from_keyvalues(ModelConfig{}.to_keyvalues()) == ModelConfig{});
}

TEST_CASE("init is deterministic with zero biases and shaped parameters") {
  const ModelConfig c;
  const Model a = init_model(c, 5), b = init_model(c, 5), other = init_model(c, 6);
  CHECK(a == b);
  CHECK_FALSE(a == other);
  for (const auto& layer : a.extractor) CHECK(layer.bias.vec().isZero(0));
  CHECK(a.classifier.bias.vec().isZero(0));
  CHECK(a.compensation.bias.vec().isZero(0));
  CHECK(a.extractor[0].kernel.shape() == Shape{3, 3, 3, 16});
  CHECK(a.extractor[2].kernel.shape() == Shape{3, 3, 32, 32});
  CHECK(a.classifier.kernel.shape() == Shape{1, 1, 32, 6});
  CHECK(a.compensation.kernel.shape() == Shape{1, 1, 32, 32});
}

TEST_CASE("init std follows fan-in scaling") {
  const Model m = init_model(ModelConfig{}, 11);
  auto check_layer = [](const Tensor& k) {
    const double fan_in = double(k.dim(0) * k.dim(1) * k.dim(2));
    const double mean = k.vec().cast<double>().mean();
    const double var = (k.vec().cast<double>().array() - mean).square().mean();
    INFO("fan-in ", fan_in, " size ", k.size());
    CHECK(std::abs(std::sqrt(var) / std::sqrt(2.0 / fan_in) - 1.0) <= 0.2);
  };
  // Layers with at least 1000 weights.
  check_layer(m.extractor[1].kernel);
  check_layer(m.extractor[2].kernel);
  check_layer(m.compensation.kernel);
}

TEST_CASE("extract_features shape and zero input") {
  Model m = init_model(small_config(), 1);
  const Tensor a = extract_features(m, Tensor({7, 5, 3}));
  CHECK(a.shape() == Shape{7, 5, 6});
  CHECK(a.vec().isZero(0));
  std::mt19937_64 rng(2);
  const auto fr = forward(m, random_tensor({9, 4, 3}, rng));
  CHECK(fr.features.shape() == Shape{9, 4, 6});
  CHECK(fr.logits.shape() == Shape{9, 4, 3});
  CHECK_THROWS_AS(extract_features(m, Tensor({4, 4, 2})), DimensionError);
}

TEST_CASE("classify is a per-pixel matrix product") {
  Model m = init_model(small_config(), 3);
  std::mt19937_64 rng(4);
  m.classifier.bias = random_tensor({3}, rng);
  SUBCASE("zero features give the bias") {
    const Tensor y = classify(m, Tensor({2, 2, 6}));
    for (Index p = 0; p < 4; ++p)
      for (Index c = 0; c < 3; ++c) CHECK(y.pixels()(p, c) == m.classifier.bias[c]);
  }
  SUBCASE("one-hot channel copies the weight row") {
    m.classifier.bias = Tensor({3});
    for (Index k = 0; k < 6; ++k)
      for (Index c = 0; c < 3; ++c) m.classifier.kernel[k * 3 + c] = (k == 2 && c == 1) ? 1.f : 0.f;
    Tensor a({2, 2, 6});
    for (Index p = 0; p < 4; ++p) a.pixels()(p, 2) = float(p + 1);
    const Tensor y = classify(m, a);
    for (Index p = 0; p < 4; ++p) CHECK(y.pixels()(p, 1) == float(p + 1));
  }
  SUBCASE("matmul oracle") {
    const Tensor a = random_tensor({3, 4, 6}, rng);
    const Tensor y = classify(m, a);
    for (Index p = 0; p < 12; ++p)
      for (Index c = 0; c < 3; ++c) {
        double s = m.classifier.bias[c];
        for (Index k = 0; k < 6; ++k) s += double(a.pixels()(p, k)) * m.class_weight(c, k);
        CHECK(std::abs(y.pixels()(p, c) - s) <= 1e-5);
      }
  }
  SUBCASE("linearity") {
    const Tensor a1 = random_tensor({3, 3, 6}, rng), a2 = random_tensor({3, 3, 6}, rng);
    const Tensor y0 = classify(m, Tensor({3, 3, 6}));
    const Tensor lhs = classify(m, a1 + a2) - y0;
    const Tensor rhs = (classify(m, a1) - y0) + (classify(m, a2) - y0);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-5);
  }
  CHECK_THROWS_AS(classify(m, Tensor({2, 2, 5})), DimensionError);
}

TEST_CASE("feature gradient w.r.t. the first kernel matches finite differences") {
  const ModelD m = init_model(small_config(), 7).cast<double>();
  std::mt19937_64 rng(8);
  const TensorD x = random_tensor<double>({5, 5, 3}, rng);
  GraphD g;
  const BoundModel bound = bind_model(g, m, true);
  const auto grads = g.backward(g.sum(extract_features(g, bound, g.input(x))));
  const TensorD& k0 = m.extractor[0].kernel;
  GradCheckResult r;
  for (int n = 0; n < 30; ++n) {
    const Index i = std::uniform_int_distribution<Index>(0, k0.size() - 1)(rng);
    auto f = [&](const TensorD& probe) {
      ModelD copy = m;
      copy.extractor[0].kernel = probe;
      return double(extract_features(copy, x).vec().sum());
    };
    r.add(grads[bound.extractor[0].kernel][i], finite_difference_gradient(f, k0, i, 1e-6));
  }
  CHECK(r.ok());
}

TEST_CASE("checkpoint round-trip is bit exact") {
  const Model m = init_model(ModelConfig{}, 21);
  const auto path = temp_file("ckpt.dcm");
  save_checkpoint(m, path);
  const Model back = load_checkpoint(path);
  CHECK(back == m);
  CHECK(back.config == m.config);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(m));
}

TEST_CASE("checkpoint errors") {
  const Model m = init_model(small_config(), 22);
  const std::string bytes = serialize_checkpoint(m);
  for (std::size_t cut : {std::size_t(3), std::size_t(10), bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, cut)), FormatError);
  }
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), FormatError);
  const auto path = temp_file("ckpt_small.dcm");
  save_checkpoint(m, path);
  CHECK_NOTHROW(load_checkpoint(path, 3));
  CHECK_THROWS_AS(load_checkpoint(path, 6), FormatError);

  std::string wrong_version = bytes;
  const auto pos = wrong_version.find("format_version = 1");
  REQUIRE(pos != std::string::npos);
  wrong_version[pos + 17] = '9';
  CHECK_THROWS_AS(parse_checkpoint(wrong_version), FormatError);
}
