#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dropclass/tensor.hpp"

namespace dropclass {

/// Central difference (f(t + h e_i) - f(t - h e_i)) / 2h, evaluated in double.
inline double finite_difference_gradient(const std::function<double(const TensorD&)>& f, const TensorD& t,
                                         Index coordinate, double step) {
  if (!(step > 0)) throw ContractError("tensor_core", "finite difference step must be positive");
  if (coordinate < 0 || coordinate >= t.size()) {
    throw ContractError("tensor_core", "finite difference coordinate out of range");
  }
  TensorD probe = t;
  probe[coordinate] = t[coordinate] + step;
  const double up = f(probe);
  probe[coordinate] = t[coordinate] - step;
  const double down = f(probe);
  return (up - down) / (2.0 * step);
}

/// |a - n| / max(|a|, |n|, abs_floor); the floor keeps gradients that are
/// numerically zero on both sides from dividing by noise.
inline double relative_error(double analytic, double numeric, double abs_floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), abs_floor});
}

struct GradCheckResult {
  std::string name;
  int coordinates = 0;
  int passed = 0;
  double max_relative_error = 0.0;
  double tolerance = 1e-3;
  double required_fraction = 0.95;

  double pass_fraction() const { return coordinates ? double(passed) / coordinates : 0.0; }
  bool ok() const { return coordinates > 0 && pass_fraction() >= required_fraction; }

  void add(double analytic, double numeric) {
    const double e = relative_error(analytic, numeric);
    ++coordinates;
    if (e <= tolerance) ++passed;
    max_relative_error = std::max(max_relative_error, e);
  }
};

/// Finite-difference checks of conv2d, relu, softmax/cross-entropy and the
/// full training objective (importance maps held constant), in 64-bit.
std::vector<GradCheckResult> run_grad_check_suite(std::uint64_t seed, int coordinates = 40);

}  // namespace dropclass
