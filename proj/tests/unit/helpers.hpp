#pragma once

#include <random>

#include "dropclass/tensor.hpp"

namespace dropclass::testing {

template <typename Scalar = float>
BasicTensor<Scalar> random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  BasicTensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = Scalar(n(rng));
  return t;
}

template <typename Scalar>
double max_abs_diff(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return double((a.vec() - b.vec()).cwiseAbs().maxCoeff());
}

}  // namespace dropclass::testing
