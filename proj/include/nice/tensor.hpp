// Copyright 2026 The nice Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef NICE_TENSOR_HPP
#define NICE_TENSOR_HPP

#include <Eigen/Dense>

#include <string>

#include "nice/error.hpp"

namespace nicekit {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline std::string shape_string(Index a, Index b, Index c, Index d) {
  return "(" + std::to_string(a) + ", " + std::to_string(b) + ", " + std::to_string(c) + ", " +
         std::to_string(d) + ")";
}

// Dense 4-axis tensor laid out row-major as (batch, maps, rows, cols).  In the
// encoder rows are electrodes and cols are time samples.
template <typename Scalar>
class Tensor4 {
 public:
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor4() = default;

  Tensor4(Index batch, Index maps, Index rows, Index cols)
      : batch_(batch), maps_(maps), rows_(rows), cols_(cols) {
    if (batch < 1 || maps < 1 || rows < 1 || cols < 1) {
      throw DimensionError("tensor dimensions must be >= 1, got " +
                           shape_string(batch, maps, rows, cols));
    }
    data_ = Vector<Scalar>::Zero(batch * maps * rows * cols);
  }

  static Tensor4 Constant(Index batch, Index maps, Index rows, Index cols, Scalar value) {
    Tensor4 t(batch, maps, rows, cols);
    t.data_.setConstant(value);
    return t;
  }

  Index batch() const { return batch_; }
  Index maps() const { return maps_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Vector<Scalar>& flat() { return data_; }
  const Vector<Scalar>& flat() const { return data_; }

  Scalar& operator()(Index n, Index f, Index r, Index c) {
    return data_[((n * maps_ + f) * rows_ + r) * cols_ + c];
  }
  Scalar operator()(Index n, Index f, Index r, Index c) const {
    return data_[((n * maps_ + f) * rows_ + r) * cols_ + c];
  }

  // One (rows, cols) plane.
  MatrixMap slab(Index n, Index f) {
    return MatrixMap(data() + (n * maps_ + f) * rows_ * cols_, rows_, cols_);
  }
  ConstMatrixMap slab(Index n, Index f) const {
    return ConstMatrixMap(data() + (n * maps_ + f) * rows_ * cols_, rows_, cols_);
  }

  // A whole batch item as a (maps * rows, cols) matrix.
  MatrixMap sample(Index n) {
    return MatrixMap(data() + n * maps_ * rows_ * cols_, maps_ * rows_, cols_);
  }
  ConstMatrixMap sample(Index n) const {
    return ConstMatrixMap(data() + n * maps_ * rows_ * cols_, maps_ * rows_, cols_);
  }

  bool same_shape(const Tensor4& other) const {
    return batch_ == other.batch_ && maps_ == other.maps_ && rows_ == other.rows_ &&
           cols_ == other.cols_;
  }

  std::string shape() const { return shape_string(batch_, maps_, rows_, cols_); }

  template <typename Other>
  Tensor4<Other> cast() const {
    Tensor4<Other> out(batch_, maps_, rows_, cols_);
    out.flat() = data_.template cast<Other>();
    return out;
  }

 private:
  Index batch_ = 0;
  Index maps_ = 0;
  Index rows_ = 0;
  Index cols_ = 0;
  Vector<Scalar> data_;
};

}  // namespace nicekit

#endif  // NICE_TENSOR_HPP
