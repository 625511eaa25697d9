#include "dropclass/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unistd.h>

namespace dropclass {
namespace {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

constexpr std::array<char, 4> kTensorMagic{'D', 'C', 'T', '1'};
constexpr std::array<char, 4> kLabelMagic{'D', 'C', 'L', '1'};
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw FormatError("tensor_core", "truncated header");
  return v;
}

void expect_magic(std::istream& in, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  in.read(got.data(), 4);
  if (!in) throw FormatError("tensor_core", "truncated magic");
  if (got != magic) {
    throw FormatError("tensor_core", "bad magic '" + std::string(got.data(), 4) + "', expected '" +
                                         std::string(magic.data(), 4) + "'");
  }
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

Tensor read_tensor(std::istream& in) {
  expect_magic(in, kTensorMagic);
  const std::uint32_t rank = get_u32(in);
  if (rank > kMaxRank) throw FormatError("tensor_core", "implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(in);
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(t.size() * sizeof(float))) {
    throw FormatError("tensor_core", "truncated tensor payload for shape " + to_string(shape));
  }
  require_finite(t, "read_tensor");
  return t;
}

void write_labels(std::ostream& out, const LabelMap& labels) {
  out.write(kLabelMagic.data(), 4);
  put_u32(out, 2);
  put_u32(out, static_cast<std::uint32_t>(labels.height));
  put_u32(out, static_cast<std::uint32_t>(labels.width));
  out.write(reinterpret_cast<const char*>(labels.data.data()), static_cast<std::streamsize>(labels.data.size()));
}

LabelMap read_labels(std::istream& in) {
  expect_magic(in, kLabelMagic);
  if (get_u32(in) != 2) throw FormatError("tensor_core", "label map rank must be 2");
  const Index h = get_u32(in);
  const Index w = get_u32(in);
  LabelMap labels(h, w);
  in.read(reinterpret_cast<char*>(labels.data.data()), static_cast<std::streamsize>(labels.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(labels.data.size())) {
    throw FormatError("tensor_core", "truncated label payload");
  }
  return labels;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("io", "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("io", "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("io", "rename to " + path.string() + " failed: " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("io", "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ostringstream out;
  write_tensor(out, t);
  write_file_atomic(path, out.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return read_tensor(in);
}

void save_labels(const std::filesystem::path& path, const LabelMap& labels) {
  std::ostringstream out;
  write_labels(out, labels);
  write_file_atomic(path, out.str());
}

LabelMap load_labels(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return read_labels(in);
}

}  // namespace dropclass
