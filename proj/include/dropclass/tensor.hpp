#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dropclass/errors.hpp"

namespace dropclass {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "," : "") << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense row-major tensor. Image and feature tensors are [height, width,
/// channels]; a rank-0 tensor holds a single scalar.
///
/// The last dimension is contiguous, so any tensor can be viewed as a
/// (size / channels) x channels row-major matrix through pixels(). Most
/// operations are written against that view.
template <typename Scalar>
class BasicTensor {
 public:
  using scalar_type = Scalar;

  BasicTensor() : shape_{0}, data_(0) {}

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Vector<Scalar>::Constant(checked_size(shape_), fill)) {}

  BasicTensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)) {
    const Index n = checked_size(shape_);
    if (static_cast<Index>(values.size()) != n) {
      throw DimensionError("tensor_core", "data length " + std::to_string(values.size()) +
                                              " does not match shape " + to_string(shape_));
    }
    data_ = Eigen::Map<const Vector<Scalar>>(values.data(), n);
  }

  BasicTensor(Shape shape, Vector<Scalar> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != checked_size(shape_)) {
      throw DimensionError("tensor_core", "data length " + std::to_string(data_.size()) +
                                              " does not match shape " + to_string(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), Scalar(0)); }
  static BasicTensor scalar(Scalar value) { return BasicTensor(Shape{}, value); }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const noexcept { return data_.size(); }
  Index channels() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<Scalar> data() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> data() const noexcept {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Vector<Scalar>& vec() noexcept { return data_; }
  const Vector<Scalar>& vec() const noexcept { return data_; }

  Eigen::Map<RowMatrix<Scalar>> pixels() {
    return {data_.data(), data_.size() / std::max<Index>(channels(), 1), channels()};
  }
  Eigen::Map<const RowMatrix<Scalar>> pixels() const {
    return {data_.data(), data_.size() / std::max<Index>(channels(), 1), channels()};
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index i, Index j, Index k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  Scalar operator()(Index i, Index j, Index k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Scalar item() const {
    if (data_.size() != 1) {
      throw ContractError("tensor_core", "item() on tensor of shape " + to_string(shape_));
    }
    return data_[0];
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, Vector<Other>(data_.template cast<Other>()));
  }

  bool operator==(const BasicTensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  static Index checked_size(const Shape& shape) {
    for (Index d : shape) {
      if (d < 0) throw DimensionError("tensor_core", "negative dimension in " + to_string(shape));
    }
    return shape_size(shape);
  }

  Shape shape_;
  Vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename Scalar>
void require_finite(const BasicTensor<Scalar>& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError("tensor_core", std::string(op) + " produced a non-finite value");
  }
}

template <typename Scalar>
void require_shape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError("tensor_core", std::string(op) + ": shape " + to_string(a.shape()) +
                                            " vs " + to_string(b.shape()));
  }
}

// Elementwise ops ----------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& t) {
  require_finite(t, "relu");
  return BasicTensor<Scalar>(t.shape(), Vector<Scalar>(t.vec().cwiseMax(Scalar(0))));
}

template <typename Scalar>
BasicTensor<Scalar> hadamard(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_shape(a, b, "hadamard");
  BasicTensor<Scalar> out(a.shape(), Vector<Scalar>(a.vec().cwiseProduct(b.vec())));
  require_finite(out, "hadamard");
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_shape(a, b, "add");
  BasicTensor<Scalar> out(a.shape(), Vector<Scalar>(a.vec() + b.vec()));
  require_finite(out, "add");
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_shape(a, b, "subtract");
  BasicTensor<Scalar> out(a.shape(), Vector<Scalar>(a.vec() - b.vec()));
  require_finite(out, "subtract");
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> operator*(Scalar s, const BasicTensor<Scalar>& t) {
  BasicTensor<Scalar> out(t.shape(), Vector<Scalar>(s * t.vec()));
  require_finite(out, "scale");
  return out;
}

/// Softmax over the last (channel) axis, max-subtracted per pixel.
template <typename Scalar>
BasicTensor<Scalar> softmax_channels(const BasicTensor<Scalar>& t) {
  if (t.rank() == 0 || t.channels() < 1) {
    throw DimensionError("tensor_core", "softmax_channels needs at least one channel");
  }
  BasicTensor<Scalar> out(t.shape());
  auto in = t.pixels();
  auto o = out.pixels();
  for (Index r = 0; r < in.rows(); ++r) {
    const Scalar m = in.row(r).maxCoeff();
    o.row(r) = (in.row(r).array() - m).exp().matrix();
    o.row(r) /= o.row(r).sum();
  }
  require_finite(out, "softmax_channels");
  return out;
}

// Convolution ----------------------------------------------------------------

enum class Padding { same, valid };

struct ConvGeometry {
  Index in_h, in_w, cin, kh, kw, cout, pad_h, pad_w, out_h, out_w;

  Index patch_size() const { return kh * kw * cin; }
  bool is_pointwise() const { return kh == 1 && kw == 1; }
};

template <typename Scalar>
ConvGeometry conv_geometry(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernel,
                           const BasicTensor<Scalar>& bias, Padding padding) {
  if (input.rank() != 3 || kernel.rank() != 4 || bias.rank() != 1) {
    throw DimensionError("tensor_core", "conv2d expects input[h,w,cin], kernel[kh,kw,cin,cout], bias[cout]; got " +
                                            to_string(input.shape()) + ", " + to_string(kernel.shape()) +
                                            ", " + to_string(bias.shape()));
  }
  ConvGeometry g{};
  g.in_h = input.dim(0);
  g.in_w = input.dim(1);
  g.cin = input.dim(2);
  g.kh = kernel.dim(0);
  g.kw = kernel.dim(1);
  g.cout = kernel.dim(3);
  if (g.kh % 2 == 0 || g.kw % 2 == 0) {
    throw DimensionError("tensor_core", "conv2d kernel spatial dims must be odd, got " + to_string(kernel.shape()));
  }
  if (kernel.dim(2) != g.cin) {
    throw DimensionError("tensor_core", "conv2d input channels " + std::to_string(g.cin) +
                                            " do not match kernel cin " + std::to_string(kernel.dim(2)));
  }
  if (bias.dim(0) != g.cout) {
    throw DimensionError("tensor_core", "conv2d bias length " + std::to_string(bias.dim(0)) +
                                            " does not match cout " + std::to_string(g.cout));
  }
  g.pad_h = padding == Padding::same ? g.kh / 2 : 0;
  g.pad_w = padding == Padding::same ? g.kw / 2 : 0;
  g.out_h = g.in_h + 2 * g.pad_h - g.kh + 1;
  g.out_w = g.in_w + 2 * g.pad_w - g.kw + 1;
  if (g.out_h <= 0 || g.out_w <= 0) {
    throw DimensionError("tensor_core", "conv2d valid padding with kernel larger than input");
  }
  return g;
}

namespace detail {

/// Gathers every receptive field into one row: (out_h*out_w) x (kh*kw*cin).
/// Row layout matches a [kh,kw,cin,cout] kernel viewed as (kh*kw*cin) x cout.
template <typename Scalar>
RowMatrix<Scalar> im2col(const BasicTensor<Scalar>& input, const ConvGeometry& g) {
  RowMatrix<Scalar> patches = RowMatrix<Scalar>::Zero(g.out_h * g.out_w, g.patch_size());
  const Scalar* src = input.data().data();
  for (Index oy = 0; oy < g.out_h; ++oy) {
    for (Index ox = 0; ox < g.out_w; ++ox) {
      Scalar* row = patches.row(oy * g.out_w + ox).data();
      for (Index ky = 0; ky < g.kh; ++ky) {
        const Index iy = oy + ky - g.pad_h;
        if (iy < 0 || iy >= g.in_h) continue;
        for (Index kx = 0; kx < g.kw; ++kx) {
          const Index ix = ox + kx - g.pad_w;
          if (ix < 0 || ix >= g.in_w) continue;
          std::copy_n(src + (iy * g.in_w + ix) * g.cin, g.cin, row + (ky * g.kw + kx) * g.cin);
        }
      }
    }
  }
  return patches;
}

/// Adjoint of im2col: scatters patch gradients back onto the input grid.
template <typename Scalar>
void col2im_accumulate(const RowMatrix<Scalar>& patch_grad, const ConvGeometry& g, BasicTensor<Scalar>& input_grad) {
  Scalar* dst = input_grad.data().data();
  for (Index oy = 0; oy < g.out_h; ++oy) {
    for (Index ox = 0; ox < g.out_w; ++ox) {
      const Scalar* row = patch_grad.row(oy * g.out_w + ox).data();
      for (Index ky = 0; ky < g.kh; ++ky) {
        const Index iy = oy + ky - g.pad_h;
        if (iy < 0 || iy >= g.in_h) continue;
        for (Index kx = 0; kx < g.kw; ++kx) {
          const Index ix = ox + kx - g.pad_w;
          if (ix < 0 || ix >= g.in_w) continue;
          Scalar* d = dst + (iy * g.in_w + ix) * g.cin;
          const Scalar* s = row + (ky * g.kw + kx) * g.cin;
          for (Index c = 0; c < g.cin; ++c) d[c] += s[c];
        }
      }
    }
  }
}

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> kernel_matrix(const BasicTensor<Scalar>& kernel, const ConvGeometry& g) {
  return {kernel.data().data(), g.patch_size(), g.cout};
}

}  // namespace detail

/// Stride-1 2-D convolution (cross-correlation) with zero padding.
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernel,
                           const BasicTensor<Scalar>& bias, Padding padding = Padding::same) {
  const ConvGeometry g = conv_geometry(input, kernel, bias, padding);
  BasicTensor<Scalar> out(Shape{g.out_h, g.out_w, g.cout});
  auto k = detail::kernel_matrix(kernel, g);
  if (g.is_pointwise()) {
    out.pixels().noalias() = input.pixels() * k;
  } else {
    out.pixels().noalias() = detail::im2col(input, g) * k;
  }
  out.pixels().rowwise() += bias.vec().transpose();
  require_finite(out, "conv2d");
  return out;
}

}  // namespace dropclass
