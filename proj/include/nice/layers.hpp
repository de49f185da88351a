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

// Differentiable layers of the EEG encoder.  Every layer is a pair of free
// functions: a forward pass over value inputs and a backward pass returning
// exact gradients with respect to the input and each learnable tensor.

#ifndef NICE_LAYERS_HPP
#define NICE_LAYERS_HPP

#include <cmath>
#include <concepts>
#include <vector>

#include "nice/tensor.hpp"

namespace nicekit {

enum class Mode { Train, Eval };

template <typename Scalar, typename Input = Tensor4<Scalar>>
struct LayerGrad {
  Input d_input;
  std::vector<Matrix<Scalar>> d_params;
};

namespace detail {

// Sliding windows of each row as columns: cols(:, r * out_len + t) = x(r, t : t + width).
template <typename Scalar>
void im2col_rows(const Scalar* x, Index rows, Index len, Index width, Matrix<Scalar>& cols) {
  const Index out_len = len - width + 1;
  cols.resize(width, rows * out_len);
  for (Index r = 0; r < rows; ++r) {
    const Scalar* row = x + r * len;
    for (Index t = 0; t < out_len; ++t) {
      cols.col(r * out_len + t) = Eigen::Map<const Vector<Scalar>>(row + t, width);
    }
  }
}

template <typename Scalar>
void col2im_rows(const Matrix<Scalar>& cols, Index rows, Index len, Index width, Scalar* x) {
  const Index out_len = len - width + 1;
  for (Index r = 0; r < rows; ++r) {
    Scalar* row = x + r * len;
    for (Index t = 0; t < out_len; ++t) {
      Eigen::Map<Vector<Scalar>>(row + t, width) += cols.col(r * out_len + t);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Temporal convolution: k kernels of size (1, m1), stride (1, 1), no padding.

template <typename Scalar>
Tensor4<Scalar> temporal_conv(const Tensor4<Scalar>& x, const Matrix<Scalar>& weights,
                              const Vector<Scalar>& bias) {
  if (x.maps() != 1) {
    throw DimensionError("temporal_conv expects a single input map, got " + x.shape());
  }
  if (bias.size() != weights.rows()) {
    throw DimensionError("temporal_conv bias has " + std::to_string(bias.size()) +
                         " entries for " + std::to_string(weights.rows()) + " kernels");
  }
  const Index width = weights.cols();
  if (width < 1 || width > x.cols()) {
    throw InvalidKernelError("temporal kernel width " + std::to_string(width) +
                             " does not fit " + std::to_string(x.cols()) + " samples");
  }
  const Index kernels = weights.rows();
  const Index out_len = x.cols() - width + 1;
  Tensor4<Scalar> out(x.batch(), kernels, x.rows(), out_len);
  Matrix<Scalar> cols;
  for (Index n = 0; n < x.batch(); ++n) {
    detail::im2col_rows(x.sample(n).data(), x.rows(), x.cols(), width, cols);
    Eigen::Map<RowMatrix<Scalar>> y(out.sample(n).data(), kernels, x.rows() * out_len);
    y.noalias() = weights * cols;
    y.colwise() += bias;
  }
  return out;
}

// d_params = {d_weights (k, m1), d_bias (k, 1)}.  The input gradient is only
// formed when requested; the first layer of a network does not need it.
template <typename Scalar>
LayerGrad<Scalar> temporal_conv_backward(const Tensor4<Scalar>& x, const Matrix<Scalar>& weights,
                                         const Tensor4<Scalar>& d_out, bool input_grad = true) {
  const Index width = weights.cols();
  const Index kernels = weights.rows();
  const Index out_len = x.cols() - width + 1;
  if (d_out.batch() != x.batch() || d_out.maps() != kernels || d_out.rows() != x.rows() ||
      d_out.cols() != out_len) {
    throw DimensionError("temporal_conv_backward: gradient shape " + d_out.shape() +
                         " does not match the forward output");
  }
  LayerGrad<Scalar> grad;
  Matrix<Scalar> d_w = Matrix<Scalar>::Zero(kernels, width);
  Vector<Scalar> d_b = Vector<Scalar>::Zero(kernels);
  if (input_grad) grad.d_input = Tensor4<Scalar>(x.batch(), 1, x.rows(), x.cols());
  Matrix<Scalar> cols;
  Matrix<Scalar> d_cols;
  for (Index n = 0; n < x.batch(); ++n) {
    Eigen::Map<const RowMatrix<Scalar>> dy(d_out.sample(n).data(), kernels, x.rows() * out_len);
    detail::im2col_rows(x.sample(n).data(), x.rows(), x.cols(), width, cols);
    d_w.noalias() += dy * cols.transpose();
    d_b += dy.rowwise().sum();
    if (input_grad) {
      d_cols.noalias() = weights.transpose() * dy;
      detail::col2im_rows(d_cols, x.rows(), x.cols(), width, grad.d_input.sample(n).data());
    }
  }
  grad.d_params.push_back(std::move(d_w));
  grad.d_params.push_back(d_b);
  return grad;
}

// ---------------------------------------------------------------------------
// Average pooling along the sample axis, kernel (1, m2), stride (1, s2).

inline Index pooled_length(Index length, Index kernel, Index stride) {
  return (length - kernel) / stride + 1;
}

template <typename Scalar>
Tensor4<Scalar> avg_pool(const Tensor4<Scalar>& x, Index kernel, Index stride) {
  if (stride < 1) throw InvalidKernelError("pooling stride must be >= 1");
  if (kernel < 1 || kernel > x.cols()) {
    throw InvalidKernelError("pooling kernel " + std::to_string(kernel) + " does not fit " +
                             std::to_string(x.cols()) + " samples");
  }
  const Index len = x.cols();
  const Index out_len = pooled_length(len, kernel, stride);
  Tensor4<Scalar> out(x.batch(), x.maps(), x.rows(), out_len);
  const Index n_rows = x.batch() * x.maps() * x.rows();
  const Scalar scale = Scalar(1) / Scalar(kernel);
  std::vector<Scalar> prefix(len + 1);
  for (Index r = 0; r < n_rows; ++r) {
    const Scalar* in = x.data() + r * len;
    Scalar* y = out.data() + r * out_len;
    prefix[0] = Scalar(0);
    for (Index t = 0; t < len; ++t) prefix[t + 1] = prefix[t] + in[t];
    for (Index j = 0; j < out_len; ++j) {
      y[j] = (prefix[j * stride + kernel] - prefix[j * stride]) * scale;
    }
  }
  return out;
}

template <typename Scalar>
Tensor4<Scalar> avg_pool_backward(const Tensor4<Scalar>& d_out, Index input_len, Index kernel,
                                  Index stride) {
  const Index out_len = pooled_length(input_len, kernel, stride);
  if (d_out.cols() != out_len) {
    throw DimensionError("avg_pool_backward: gradient length " + std::to_string(d_out.cols()) +
                         " != " + std::to_string(out_len));
  }
  Tensor4<Scalar> d_in(d_out.batch(), d_out.maps(), d_out.rows(), input_len);
  const Index n_rows = d_out.batch() * d_out.maps() * d_out.rows();
  const Scalar scale = Scalar(1) / Scalar(kernel);
  std::vector<Scalar> delta(input_len + 1);
  for (Index r = 0; r < n_rows; ++r) {
    const Scalar* dy = d_out.data() + r * out_len;
    Scalar* dx = d_in.data() + r * input_len;
    std::fill(delta.begin(), delta.end(), Scalar(0));
    for (Index j = 0; j < out_len; ++j) {
      delta[j * stride] += dy[j] * scale;
      delta[j * stride + kernel] -= dy[j] * scale;
    }
    Scalar running(0);
    for (Index t = 0; t < input_len; ++t) {
      running += delta[t];
      dx[t] = running;
    }
  }
  return d_in;
}

// ---------------------------------------------------------------------------
// Spatial convolution: k kernels spanning every input map and all C
// electrodes.  weights(f, g * C + c) is the tap for output map f, input map g
// and electrode c.

template <typename Scalar>
Tensor4<Scalar> spatial_conv(const Tensor4<Scalar>& x, const Matrix<Scalar>& weights,
                             const Vector<Scalar>& bias) {
  if (weights.cols() != x.maps() * x.rows()) {
    throw DimensionError("spatial_conv weights span " + std::to_string(weights.cols()) +
                         " taps but input " + x.shape() + " needs maps * electrodes = " +
                         std::to_string(x.maps() * x.rows()));
  }
  if (bias.size() != weights.rows()) {
    throw DimensionError("spatial_conv bias size mismatch");
  }
  const Index kernels = weights.rows();
  Tensor4<Scalar> out(x.batch(), kernels, 1, x.cols());
  for (Index n = 0; n < x.batch(); ++n) {
    auto y = out.sample(n);
    y.noalias() = weights * x.sample(n);
    y.colwise() += bias;
  }
  return out;
}

template <typename Scalar>
LayerGrad<Scalar> spatial_conv_backward(const Tensor4<Scalar>& x, const Matrix<Scalar>& weights,
                                        const Tensor4<Scalar>& d_out) {
  if (d_out.batch() != x.batch() || d_out.maps() != weights.rows() || d_out.rows() != 1 ||
      d_out.cols() != x.cols()) {
    throw DimensionError("spatial_conv_backward: gradient shape " + d_out.shape() +
                         " does not match the forward output");
  }
  LayerGrad<Scalar> grad;
  grad.d_input = Tensor4<Scalar>(x.batch(), x.maps(), x.rows(), x.cols());
  Matrix<Scalar> d_w = Matrix<Scalar>::Zero(weights.rows(), weights.cols());
  Vector<Scalar> d_b = Vector<Scalar>::Zero(weights.rows());
  for (Index n = 0; n < x.batch(); ++n) {
    const auto dy = d_out.sample(n);
    d_w.noalias() += dy * x.sample(n).transpose();
    d_b += dy.rowwise().sum();
    grad.d_input.sample(n).noalias() = weights.transpose() * dy;
  }
  grad.d_params.push_back(std::move(d_w));
  grad.d_params.push_back(d_b);
  return grad;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, rows, cols) for each map.

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename Scalar>
struct BatchNorm {
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
  Vector<Scalar> running_mean;
  Vector<Scalar> running_var;

  static BatchNorm Identity(Index maps) {
    return {Vector<Scalar>::Ones(maps), Vector<Scalar>::Zero(maps), Vector<Scalar>::Zero(maps),
            Vector<Scalar>::Ones(maps)};
  }

  template <typename Other>
  BatchNorm<Other> cast() const {
    return {gamma.template cast<Other>(), beta.template cast<Other>(),
            running_mean.template cast<Other>(), running_var.template cast<Other>()};
  }
};

template <typename Scalar>
struct BatchNormCache {
  Mode mode = Mode::Eval;
  Tensor4<Scalar> normalized;
  Vector<Scalar> inv_std;
  Vector<double> batch_mean;
  Vector<double> batch_var;  // biased
  Index count = 0;           // elements per map
};

template <typename Scalar>
Tensor4<Scalar> batch_norm(const Tensor4<Scalar>& x, const BatchNorm<Scalar>& bn, Mode mode,
                           BatchNormCache<Scalar>* cache = nullptr) {
  const Index maps = x.maps();
  if (bn.gamma.size() != maps || bn.beta.size() != maps || bn.running_mean.size() != maps ||
      bn.running_var.size() != maps) {
    throw DimensionError("batch_norm parameters sized for " + std::to_string(bn.gamma.size()) +
                         " maps, input " + x.shape());
  }
  if (mode == Mode::Train && x.batch() < 2) {
    throw DegenerateBatchError("batch_norm in train mode needs a batch of at least 2");
  }
  const Index plane = x.rows() * x.cols();
  const Index count = x.batch() * plane;

  Vector<double> mean(maps);
  Vector<double> var(maps);
  if (mode == Mode::Train) {
    for (Index f = 0; f < maps; ++f) {
      double sum = 0.0;
      for (Index n = 0; n < x.batch(); ++n) {
        sum += x.slab(n, f).template cast<double>().sum();
      }
      const double mu = sum / double(count);
      double sq = 0.0;
      for (Index n = 0; n < x.batch(); ++n) {
        sq += (x.slab(n, f).template cast<double>().array() - mu).square().sum();
      }
      mean[f] = mu;
      var[f] = sq / double(count);
    }
  } else {
    mean = bn.running_mean.template cast<double>();
    var = bn.running_var.template cast<double>();
  }
  Vector<Scalar> inv_std(maps);
  for (Index f = 0; f < maps; ++f) inv_std[f] = Scalar(1.0 / std::sqrt(var[f] + kBatchNormEps));

  Tensor4<Scalar> out(x.batch(), maps, x.rows(), x.cols());
  Tensor4<Scalar> normalized;
  if (cache) normalized = Tensor4<Scalar>(x.batch(), maps, x.rows(), x.cols());
  for (Index n = 0; n < x.batch(); ++n) {
    for (Index f = 0; f < maps; ++f) {
      const Scalar mu = Scalar(mean[f]);
      auto in = Eigen::Map<const Vector<Scalar>>(x.slab(n, f).data(), plane).array();
      auto y = Eigen::Map<Vector<Scalar>>(out.slab(n, f).data(), plane).array();
      if (cache) {
        auto xh = Eigen::Map<Vector<Scalar>>(normalized.slab(n, f).data(), plane).array();
        xh = (in - mu) * inv_std[f];
        y = xh * bn.gamma[f] + bn.beta[f];
      } else {
        y = (in - mu) * (inv_std[f] * bn.gamma[f]) + bn.beta[f];
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
    cache->batch_mean = mean;
    cache->batch_var = var;
    cache->count = count;
  }
  return out;
}

// d_params = {d_gamma, d_beta}.
template <typename Scalar>
LayerGrad<Scalar> batch_norm_backward(const Tensor4<Scalar>& d_out, const BatchNorm<Scalar>& bn,
                                      const BatchNormCache<Scalar>& cache) {
  const Tensor4<Scalar>& xh = cache.normalized;
  if (!d_out.same_shape(xh)) {
    throw DimensionError("batch_norm_backward: gradient shape " + d_out.shape() +
                         " != cached " + xh.shape());
  }
  const Index maps = d_out.maps();
  const Index plane = d_out.rows() * d_out.cols();
  Vector<Scalar> d_gamma(maps);
  Vector<Scalar> d_beta(maps);
  LayerGrad<Scalar> grad;
  grad.d_input = Tensor4<Scalar>(d_out.batch(), maps, d_out.rows(), d_out.cols());
  for (Index f = 0; f < maps; ++f) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (Index n = 0; n < d_out.batch(); ++n) {
      auto dy = Eigen::Map<const Vector<Scalar>>(d_out.slab(n, f).data(), plane);
      auto x = Eigen::Map<const Vector<Scalar>>(xh.slab(n, f).data(), plane);
      sum_dy += dy.template cast<double>().sum();
      sum_dy_xh += dy.template cast<double>().dot(x.template cast<double>());
    }
    d_gamma[f] = Scalar(sum_dy_xh);
    d_beta[f] = Scalar(sum_dy);
    const Scalar g = bn.gamma[f] * cache.inv_std[f];
    const Scalar mean_dy = Scalar(sum_dy / double(cache.count));
    const Scalar mean_dy_xh = Scalar(sum_dy_xh / double(cache.count));
    for (Index n = 0; n < d_out.batch(); ++n) {
      auto dy = Eigen::Map<const Vector<Scalar>>(d_out.slab(n, f).data(), plane).array();
      auto x = Eigen::Map<const Vector<Scalar>>(xh.slab(n, f).data(), plane).array();
      auto dx = Eigen::Map<Vector<Scalar>>(grad.d_input.slab(n, f).data(), plane).array();
      if (cache.mode == Mode::Train) {
        dx = (dy - mean_dy - x * mean_dy_xh) * g;
      } else {
        dx = dy * g;
      }
    }
  }
  grad.d_params.push_back(d_gamma);
  grad.d_params.push_back(d_beta);
  return grad;
}

// Running statistics use the unbiased batch variance.
template <typename Scalar>
void update_running_stats(BatchNorm<Scalar>& bn, const BatchNormCache<Scalar>& cache,
                          double momentum = kBatchNormMomentum) {
  if (cache.mode != Mode::Train) return;
  const double unbias = cache.count > 1 ? double(cache.count) / double(cache.count - 1) : 1.0;
  for (Index f = 0; f < bn.gamma.size(); ++f) {
    bn.running_mean[f] =
        Scalar((1.0 - momentum) * double(bn.running_mean[f]) + momentum * cache.batch_mean[f]);
    bn.running_var[f] = Scalar((1.0 - momentum) * double(bn.running_var[f]) +
                               momentum * cache.batch_var[f] * unbias);
  }
}

// ---------------------------------------------------------------------------
// ELU with alpha = 1.

template <typename Derived>
typename Derived::PlainObject elu(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.max(Scalar(0)) + (x.min(Scalar(0)).exp() - Scalar(1));
}

template <typename Scalar>
Tensor4<Scalar> elu(const Tensor4<Scalar>& x) {
  Tensor4<Scalar> out(x.batch(), x.maps(), x.rows(), x.cols());
  out.flat().array() = elu(x.flat().array());
  return out;
}

template <typename Scalar>
Tensor4<Scalar> elu_backward(const Tensor4<Scalar>& output, const Tensor4<Scalar>& d_out) {
  if (!output.same_shape(d_out)) throw DimensionError("elu_backward shape mismatch");
  Tensor4<Scalar> d_in(d_out.batch(), d_out.maps(), d_out.rows(), d_out.cols());
  const auto y = output.flat().array();
  d_in.flat().array() = d_out.flat().array() * (y.min(Scalar(0)) + Scalar(1));
  return d_in;
}

template <std::floating_point Scalar>
Scalar elu(Scalar x) {
  return x > 0 ? x : std::expm1(x);
}

// ---------------------------------------------------------------------------
// Linear projector y = x W + b with x (b, n), W (n, D).

template <typename Scalar>
Matrix<Scalar> linear(const Matrix<Scalar>& x, const Matrix<Scalar>& weights,
                      const Vector<Scalar>& bias) {
  if (x.cols() != weights.rows() || bias.size() != weights.cols()) {
    throw DimensionError("linear: input width " + std::to_string(x.cols()) + ", weights " +
                         std::to_string(weights.rows()) + "x" + std::to_string(weights.cols()) +
                         ", bias " + std::to_string(bias.size()));
  }
  Matrix<Scalar> y = x * weights;
  y.rowwise() += bias.transpose();
  return y;
}

// d_params = {d_weights (n, D), d_bias (D, 1)}.
template <typename Scalar>
LayerGrad<Scalar, Matrix<Scalar>> linear_backward(const Matrix<Scalar>& x,
                                                  const Matrix<Scalar>& weights,
                                                  const Matrix<Scalar>& d_out) {
  if (d_out.rows() != x.rows() || d_out.cols() != weights.cols()) {
    throw DimensionError("linear_backward: gradient shape mismatch");
  }
  LayerGrad<Scalar, Matrix<Scalar>> grad;
  grad.d_input = d_out * weights.transpose();
  grad.d_params.push_back(x.transpose() * d_out);
  grad.d_params.push_back(d_out.colwise().sum().transpose());
  return grad;
}

// ---------------------------------------------------------------------------
// Row-wise softmax with max subtraction.

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& m) {
  Matrix<Scalar> y = m.colwise() - m.rowwise().maxCoeff();
  y = y.array().exp();
  y.array().colwise() /= y.rowwise().sum().array();
  return y;
}

// Given y = softmax_rows(m) and dL/dy, returns dL/dm.
template <typename Scalar>
Matrix<Scalar> softmax_rows_backward(const Matrix<Scalar>& y, const Matrix<Scalar>& d_y) {
  Vector<Scalar> inner = (d_y.array() * y.array()).rowwise().sum();
  return (y.array() * (d_y.array().colwise() - inner.array())).matrix();
}

inline constexpr double kLeakySlope = 0.2;

template <typename Derived>
auto leaky_relu(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.max(Scalar(0)) + x.min(Scalar(0)) * Scalar(kLeakySlope);
}

// Flatten (b, maps, rows, cols) to (b, maps * rows * cols) in row-major order.
template <typename Scalar>
Matrix<Scalar> flatten(const Tensor4<Scalar>& x) {
  const Index width = x.maps() * x.rows() * x.cols();
  return Eigen::Map<const RowMatrix<Scalar>>(x.data(), x.batch(), width);
}

template <typename Scalar>
Tensor4<Scalar> unflatten(const Matrix<Scalar>& m, Index maps, Index rows, Index cols) {
  if (m.cols() != maps * rows * cols) throw DimensionError("unflatten width mismatch");
  Tensor4<Scalar> out(m.rows(), maps, rows, cols);
  Eigen::Map<RowMatrix<Scalar>>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

}  // namespace nicekit

#endif  // NICE_LAYERS_HPP
