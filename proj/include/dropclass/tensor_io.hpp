#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "dropclass/label_map.hpp"
#include "dropclass/tensor.hpp"

namespace dropclass {

// DCT1: "DCT1", u32 rank, rank x u32 dims, row-major f32 values; all little-endian.
// DCL1: "DCL1", u32 rank (=2), u32 height, u32 width, u8 labels.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void write_labels(std::ostream& out, const LabelMap& labels);
LabelMap read_labels(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_labels(const std::filesystem::path& path);

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace dropclass
