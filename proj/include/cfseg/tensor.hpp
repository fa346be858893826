#pragma once

#include <Eigen/Core>

#include "cfseg/volume.hpp"

namespace cfseg {

/// (batch, channels, depth=z, height=y, width=x); width fastest.
struct Shape {
  Index n = 0;
  Index c = 0;
  Index d = 0;
  Index h = 0;
  Index w = 0;

  Index spatial() const { return d * h * w; }
  Index size() const { return n * c * spatial(); }
  Dims dims() const { return {w, h, d}; }
  Shape with_channels(Index channels) const { return {n, channels, d, h, w}; }
  bool operator==(const Shape&) const = default;
};

/// Dense 5D tensor. Each sample is a channel-major block, so
/// `sample(b)` is a (voxels x channels) column-major matrix.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Array::Zero(shape.size())) {}
  Tensor(const Shape& shape, Array data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) fail(ErrorCode::kShapeMismatch, "tensor data size mismatch");
  }

  const Shape& shape() const { return shape_; }
  Array& data() { return data_; }
  const Array& data() const { return data_; }
  Index size() const { return data_.size(); }

  MatrixMap sample(Index b) {
    return MatrixMap(data_.data() + b * shape_.c * shape_.spatial(), shape_.spatial(), shape_.c);
  }
  ConstMatrixMap sample(Index b) const {
    return ConstMatrixMap(data_.data() + b * shape_.c * shape_.spatial(), shape_.spatial(), shape_.c);
  }

  Scalar* channel(Index b, Index c) { return data_.data() + (b * shape_.c + c) * shape_.spatial(); }
  const Scalar* channel(Index b, Index c) const {
    return data_.data() + (b * shape_.c + c) * shape_.spatial();
  }

  Scalar& operator()(Index b, Index c, Index z, Index y, Index x) {
    return channel(b, c)[x + shape_.w * (y + shape_.h * z)];
  }
  Scalar operator()(Index b, Index c, Index z, Index y, Index x) const {
    return channel(b, c)[x + shape_.w * (y + shape_.h * z)];
  }

  template <typename T>
  Tensor<T> cast() const {
    return Tensor<T>(shape_, data_.template cast<T>());
  }

 private:
  Shape shape_;
  Array data_;
};

}  // namespace cfseg
