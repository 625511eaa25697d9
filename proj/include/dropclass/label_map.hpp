#pragma once

#include <cstdint>
#include <vector>

#include "dropclass/errors.hpp"
#include "dropclass/tensor.hpp"

namespace dropclass {

/// Integer class map [height, width]; kIgnore marks pixels excluded from
/// losses and metrics.
struct LabelMap {
  static constexpr std::uint8_t kIgnore = 255;

  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(Index h, Index w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h * w), fill) {}

  Index size() const { return height * width; }
  std::uint8_t& operator()(Index i, Index j) { return data[static_cast<std::size_t>(i * width + j)]; }
  std::uint8_t operator()(Index i, Index j) const { return data[static_cast<std::size_t>(i * width + j)]; }
  std::uint8_t operator[](Index p) const { return data[static_cast<std::size_t>(p)]; }
  std::uint8_t& operator[](Index p) { return data[static_cast<std::size_t>(p)]; }

  bool contains(int c) const {
    for (auto v : data) {
      if (v == c) return true;
    }
    return false;
  }

  bool operator==(const LabelMap&) const = default;
};

inline void require_labels_in_range(const LabelMap& labels, Index num_classes, const char* module) {
  for (auto v : labels.data) {
    if (v != LabelMap::kIgnore && v >= num_classes) {
      throw ContractError(module, "label " + std::to_string(int(v)) + " out of range for " +
                                      std::to_string(num_classes) + " classes");
    }
  }
}

}  // namespace dropclass
