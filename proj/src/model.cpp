#include "dropclass/model.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "dropclass/tensor_io.hpp"

namespace dropclass {
namespace {

constexpr char kCheckpointMagic[4] = {'D', 'C', 'M', '1'};
constexpr std::int64_t kCheckpointVersion = 1;

ConvParams<float> init_conv(Index k, Index cin, Index cout, std::mt19937_64& rng) {
  const double fan_in = double(k * k * cin);
  std::normal_distribution<float> dist(0.0f, float(std::sqrt(2.0 / fan_in)));
  Tensor kernel(Shape{k, k, cin, cout});
  for (auto& w : kernel.data()) w = dist(rng);
  return {std::move(kernel), Tensor::zeros(Shape{cout})};
}

}  // namespace

void ModelConfig::validate() const {
  if (widths.empty()) throw ContractError("model", "extractor needs at least one layer");
  for (Index w : widths) {
    if (w < 1) throw ContractError("model", "extractor widths must be >= 1");
  }
  if (feature_channels != widths.back()) {
    throw ContractError("model", "feature_channels " + std::to_string(feature_channels) +
                                     " must equal the last extractor width " + std::to_string(widths.back()));
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ContractError("model", "kernel_size must be odd");
  if (compensation_kernel < 1 || compensation_kernel % 2 == 0) {
    throw ContractError("model", "compensation_kernel must be odd");
  }
  if (num_classes < 1) throw ContractError("model", "num_classes must be >= 1");
  if (input_channels < 1) throw ContractError("model", "input_channels must be >= 1");
}

KeyValues ModelConfig::to_keyvalues() const {
  KeyValues kv;
  std::string w;
  for (std::size_t i = 0; i < widths.size(); ++i) w += (i ? "," : "") + std::to_string(widths[i]);
  kv.set("widths", w);
  kv.set("kernel_size", std::int64_t(kernel_size));
  kv.set("feature_channels", std::int64_t(feature_channels));
  kv.set("num_classes", std::int64_t(num_classes));
  kv.set("compensation_kernel", std::int64_t(compensation_kernel));
  kv.set("input_channels", std::int64_t(input_channels));
  kv.set("init_seed", init_seed);
  return kv;
}

ModelConfig ModelConfig::from_keyvalues(const KeyValues& kv) {
  ModelConfig c;
  auto widths = kv.get_int_list("widths", {c.widths.begin(), c.widths.end()});
  c.widths.assign(widths.begin(), widths.end());
  c.kernel_size = kv.get_int("kernel_size", c.kernel_size);
  c.feature_channels = kv.get_int("feature_channels", c.widths.back());
  c.num_classes = kv.get_int("num_classes", c.num_classes);
  c.compensation_kernel = kv.get_int("compensation_kernel", c.compensation_kernel);
  c.input_channels = kv.get_int("input_channels", c.input_channels);
  c.init_seed = kv.get_uint("init_seed", c.init_seed);
  c.validate();
  return c;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.config = config;
  m.config.init_seed = seed;
  Index cin = config.input_channels;
  for (Index w : config.widths) {
    m.extractor.push_back(init_conv(config.kernel_size, cin, w, rng));
    cin = w;
  }
  m.classifier = init_conv(1, config.feature_channels, config.num_classes, rng);
  m.compensation = init_conv(config.compensation_kernel, config.feature_channels, config.feature_channels, rng);
  return m;
}

std::string serialize_checkpoint(const Model& model) {
  KeyValues header = model.config.to_keyvalues();
  header.set("format_version", kCheckpointVersion);
  const std::string text = header.serialize();

  std::ostringstream out;
  out.write(kCheckpointMagic, 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out << text;
  for (const Tensor* p : model.parameters()) write_tensor(out, *p);
  return out.str();
}

Model parse_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("model", "not a DCM1 checkpoint");
  }
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in || len > bytes.size()) throw FormatError("model", "truncated checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw FormatError("model", "truncated checkpoint header");

  const KeyValues header = KeyValues::parse(text, "checkpoint");
  const auto version = header.get_int("format_version", -1);
  if (version != kCheckpointVersion) {
    throw FormatError("model", "checkpoint format version " + std::to_string(version) + ", expected " +
                                   std::to_string(kCheckpointVersion));
  }
  // Build a zero model of the right shape, then fill every slot in order.
  Model model = init_model(ModelConfig::from_keyvalues(header), 0);
  model.config.init_seed = header.get_uint("init_seed", 0);
  for (Tensor* p : model.parameters()) {
    Tensor t = [&] {
      try {
        return read_tensor(in);
      } catch (const FormatError& e) {
        throw FormatError("model", std::string("truncated or corrupt checkpoint: ") + e.what());
      }
    }();
    if (t.shape() != p->shape()) {
      throw FormatError("model", "parameter shape " + to_string(t.shape()) + " does not match config shape " +
                                     to_string(p->shape()));
    }
    *p = std::move(t);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("model", "trailing bytes after checkpoint");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

Model load_checkpoint(const std::filesystem::path& path, Index expected_classes) {
  Model m = load_checkpoint(path);
  if (m.config.num_classes != expected_classes) {
    throw FormatError("model", "checkpoint has " + std::to_string(m.config.num_classes) + " classes, expected " +
                                   std::to_string(expected_classes));
  }
  return m;
}

}  // namespace dropclass
