#ifndef SPECT_TENSOR_HPP
#define SPECT_TENSOR_HPP

#include <Eigen/Dense>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "spect/common.hpp"

namespace spect {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// Dense N-dimensional array with row-major layout (last axis fastest) backed
// by an Eigen array. Value semantics throughout; hot paths map the flat
// storage into Eigen matrices.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_)) {}
  Tensor(Shape shape, Scalar fill) : Tensor(std::move(shape)) { data_.setConstant(fill); }

  static Tensor zeros(Shape shape) {
    Tensor t(std::move(shape));
    t.data_.setZero();
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  template <typename... Ix>
  Scalar& operator()(Ix... ix) {
    return data_[flat_index({static_cast<Index>(ix)...})];
  }
  template <typename... Ix>
  Scalar operator()(Ix... ix) const {
    return data_[flat_index({static_cast<Index>(ix)...})];
  }

  void set_zero() { data_.setZero(); }

  /// Reinterprets the flat data under a new shape of equal size.
  Tensor reshaped(Shape shape) const& {
    check_same_size(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }
  Tensor reshaped(Shape shape) && {
    check_same_size(shape);
    shape_ = std::move(shape);
    return std::move(*this);
  }

  bool all_finite() const { return data_.isFinite().all(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Index flat_index(std::initializer_list<Index> ix) const {
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : ix) {
      flat = flat * shape_[k] + i;
      ++k;
    }
    return flat;
  }
  void check_same_size(const Shape& shape) const {
    if (shape_size(shape) != data_.size())
      throw ShapeError("reshape size mismatch: " + shape_str(shape_) + " -> " + shape_str(shape));
  }

  Shape shape_;
  Array data_;
};

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatMap = Eigen::Map<MatrixRM<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const MatrixRM<Scalar>>;
template <typename Scalar>
using VecMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

/// Views the flat storage as a (rows x cols) row-major matrix.
template <typename Scalar>
MatMap<Scalar> as_matrix(Tensor<Scalar>& t, Index rows, Index cols) {
  return MatMap<Scalar>(t.data(), rows, cols);
}
template <typename Scalar>
ConstMatMap<Scalar> as_matrix(const Tensor<Scalar>& t, Index rows, Index cols) {
  return ConstMatMap<Scalar>(t.data(), rows, cols);
}

/// Stacks equally shaped tensors along a new leading axis.
template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("stack: empty input");
  Shape out_shape;
  out_shape.push_back(static_cast<Index>(parts.size()));
  for (Index d : parts[0].shape()) out_shape.push_back(d);
  Tensor<Scalar> out(out_shape);
  Index block = parts[0].size();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!parts[i].same_shape(parts[0])) throw ShapeError("stack: shape mismatch");
    std::copy(parts[i].data(), parts[i].data() + block, out.data() + static_cast<Index>(i) * block);
  }
  return out;
}

/// (B, T, C, H, W) -> (B, C, T, H, W); swaps the two leading inner axes.
template <typename Scalar>
Tensor<Scalar> swap_axes_12(const Tensor<Scalar>& x) {
  if (x.rank() != 5) throw ShapeError("swap_axes_12 expects rank-5, got " + shape_str(x.shape()));
  Index b = x.dim(0), t = x.dim(1), c = x.dim(2), h = x.dim(3), w = x.dim(4);
  Tensor<Scalar> y({b, c, t, h, w});
  Index plane = h * w;
  for (Index ib = 0; ib < b; ++ib)
    for (Index it = 0; it < t; ++it)
      for (Index ic = 0; ic < c; ++ic) {
        const Scalar* src = x.data() + ((ib * t + it) * c + ic) * plane;
        Scalar* dst = y.data() + ((ib * c + ic) * t + it) * plane;
        std::copy(src, src + plane, dst);
      }
  return y;
}

}  // namespace spect

#endif  // SPECT_TENSOR_HPP
