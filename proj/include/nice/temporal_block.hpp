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

// temporal_conv -> batch_norm -> elu -> avg_pool evaluated one trial at a
// time.  The convolution output of a trial never leaves the cache: the batch
// statistics it needs come from the first and second moments of the input
// windows (z = w . col + b is linear in the window), and the backward pass
// recomputes activations instead of storing them.

#ifndef NICE_TEMPORAL_BLOCK_HPP
#define NICE_TEMPORAL_BLOCK_HPP

#include <algorithm>
#include <cmath>

#include "nice/layers.hpp"

namespace nicekit {

template <typename S>
struct TemporalBlockCache {
  BatchNormCache<S> bn;        // batch statistics; `normalized` stays empty
  Vector<double> window_mean;  // (m1) mean input window
  Matrix<double> window_cov;   // (m1, m1) covariance of the input windows
};

template <typename S>
struct TemporalBlockGrad {
  Matrix<S> d_w;
  Vector<S> d_b;
  Vector<S> d_gamma;
  Vector<S> d_beta;
  Tensor4<S> d_input;  // empty unless requested
};

namespace detail {

// Mean and covariance of all length-`width` windows of every row of x.
template <typename S>
void window_moments(const Tensor4<S>& x, Index width, Vector<double>& mean, Matrix<double>& cov) {
  const Index len = x.cols();
  const Index out_len = len - width + 1;
  const Index rows = x.batch() * x.rows();
  Vector<double> sum = Vector<double>::Zero(width);
  Matrix<double> gram = Matrix<double>::Zero(width, width);
  Vector<double> h(len);
  for (Index r = 0; r < rows; ++r) {
    h = Eigen::Map<const Vector<S>>(x.data() + r * len, len).template cast<double>();
    double acc = h.head(out_len).sum();
    sum[0] += acc;
    for (Index i = 1; i < width; ++i) {
      acc += h[i + out_len - 1] - h[i - 1];
      sum[i] += acc;
    }
    for (Index d = 0; d < width; ++d) {
      double s = h.head(out_len).dot(h.segment(d, out_len));
      gram(0, d) += s;
      for (Index i = 1; i + d < width; ++i) {
        s += h[i + out_len - 1] * h[i + out_len - 1 + d] - h[i - 1] * h[i - 1 + d];
        gram(i, i + d) += s;
      }
    }
  }
  const double n = double(rows * out_len);
  mean = sum / n;
  gram = gram.template selfadjointView<Eigen::Upper>();
  cov = gram / n - mean * mean.transpose();
}

// Electrodes per tile so that the window matrix and the convolution output of
// a tile stay cache resident.
inline Index electrode_tile(Index rows_per_sample, Index conv_len, Index chans) {
  constexpr Index kTileFloats = 2000 * 1024;
  return std::clamp<Index>(kTileFloats / std::max<Index>(1, rows_per_sample * conv_len), 1, chans);
}

}  // namespace detail

// Output (b, k, C, L_pool).
template <typename S>
Tensor4<S> temporal_block(const Tensor4<S>& x, const Matrix<S>& w, const Vector<S>& b,
                          const BatchNorm<S>& bn, Index pool_kernel, Index pool_stride, Mode mode,
                          TemporalBlockCache<S>* cache = nullptr) {
  if (x.maps() != 1) throw DimensionError("temporal block expects (b, 1, C, T), got " + x.shape());
  const Index width = w.cols();
  const Index kernels = w.rows();
  if (width < 1 || width > x.cols()) {
    throw InvalidKernelError("temporal kernel width " + std::to_string(width) +
                             " does not fit " + std::to_string(x.cols()) + " samples");
  }
  if (b.size() != kernels || bn.gamma.size() != kernels) {
    throw DimensionError("temporal block bias / batch norm size mismatch");
  }
  if (mode == Mode::Train && x.batch() < 2) {
    throw DegenerateBatchError("batch_norm in train mode needs a batch of at least 2");
  }
  const Index chans = x.rows();
  const Index conv_len = x.cols() - width + 1;
  const Index out_len = pooled_length(conv_len, pool_kernel, pool_stride);
  if (pool_kernel < 1 || pool_kernel > conv_len || pool_stride < 1) {
    throw InvalidKernelError("pooling kernel " + std::to_string(pool_kernel) + " does not fit " +
                             std::to_string(conv_len) + " samples");
  }

  // x_hat = scale_f * (w_f . col) + offset_f, with col the raw window.
  Vector<double> mean(kernels), var(kernels);
  Vector<double> win_mean;
  Matrix<double> win_cov;
  if (mode == Mode::Train) {
    detail::window_moments(x, width, win_mean, win_cov);
    const Matrix<double> wd = w.template cast<double>();
    mean = wd * win_mean + b.template cast<double>();
    var = ((wd * win_cov).array() * wd.array()).rowwise().sum().cwiseMax(0.0);
  } else {
    mean = bn.running_mean.template cast<double>();
    var = bn.running_var.template cast<double>();
  }
  Vector<S> inv_std(kernels), scale(kernels), shift(kernels);
  for (Index f = 0; f < kernels; ++f) {
    inv_std[f] = S(1.0 / std::sqrt(var[f] + kBatchNormEps));
    scale[f] = bn.gamma[f] * inv_std[f];
    shift[f] = S(double(bn.beta[f]) + (double(b[f]) - mean[f]) * double(scale[f]));
  }

  Tensor4<S> out(x.batch(), kernels, chans, out_len);
  const Index tile = detail::electrode_tile(kernels + width, conv_len, chans);
  Matrix<S> cols;
  RowMatrix<S> z;
  std::vector<S> prefix(static_cast<std::size_t>(conv_len + 1));
  const S inv_pool = S(1) / S(pool_kernel);
  for (Index n = 0; n < x.batch(); ++n) {
    for (Index c0 = 0; c0 < chans; c0 += tile) {
      const Index nc = std::min(tile, chans - c0);
      detail::im2col_rows(x.sample(n).data() + c0 * x.cols(), nc, x.cols(), width, cols);
      z.noalias() = w * cols;
      for (Index f = 0; f < kernels; ++f) {
        auto row = z.row(f).array();
        row = elu((row * scale[f] + shift[f]).eval());
        for (Index c = 0; c < nc; ++c) {
          const S* a = z.data() + f * nc * conv_len + c * conv_len;
          S* y = out.data() + ((n * kernels + f) * chans + c0 + c) * out_len;
          prefix[0] = S(0);
          for (Index t = 0; t < conv_len; ++t) prefix[t + 1] = prefix[t] + a[t];
          for (Index j = 0; j < out_len; ++j) {
            y[j] = (prefix[j * pool_stride + pool_kernel] - prefix[j * pool_stride]) * inv_pool;
          }
        }
      }
    }
  }
  if (cache) {
    cache->bn.mode = mode;
    cache->bn.normalized = Tensor4<S>();
    cache->bn.inv_std = inv_std;
    cache->bn.batch_mean = mean;
    cache->bn.batch_var = var;
    cache->bn.count = x.batch() * chans * conv_len;
    cache->window_mean = std::move(win_mean);
    cache->window_cov = std::move(win_cov);
  }
  return out;
}

template <typename S>
TemporalBlockGrad<S> temporal_block_backward(const Tensor4<S>& x, const Matrix<S>& w,
                                             const Vector<S>& b, const BatchNorm<S>& bn,
                                             Index pool_kernel, Index pool_stride,
                                             const TemporalBlockCache<S>& cache,
                                             const Tensor4<S>& d_out, bool input_grad) {
  const Index width = w.cols();
  const Index kernels = w.rows();
  const Index chans = x.rows();
  const Index conv_len = x.cols() - width + 1;
  const Index out_len = pooled_length(conv_len, pool_kernel, pool_stride);
  if (d_out.batch() != x.batch() || d_out.maps() != kernels || d_out.rows() != chans ||
      d_out.cols() != out_len) {
    throw DimensionError("temporal block backward: gradient shape " + d_out.shape());
  }
  const bool train = cache.bn.mode == Mode::Train;
  const double count = double(cache.bn.count);

  // Train mode centres the windows, so x_hat = inv_std * (w . (col - mu_win)).
  Vector<S> center = Vector<S>::Zero(width);
  if (train) center = cache.window_mean.template cast<S>();
  Vector<S> offset(kernels);
  for (Index f = 0; f < kernels; ++f) {
    offset[f] = train ? S(0) : S(double(b[f]) - cache.bn.batch_mean[f]);
  }
  const Vector<S>& inv_std = cache.bn.inv_std;

  TemporalBlockGrad<S> grad;
  const Index tile = detail::electrode_tile(kernels + width, conv_len, chans);
  Matrix<S> cols;
  RowMatrix<S> xhat;
  RowMatrix<S> dy;
  Matrix<S> d_cols;
  Eigen::Array<S, 1, Eigen::Dynamic> act_grad;
  Vector<S> delta(conv_len + 1);
  const S inv_pool = S(1) / S(pool_kernel);

  // Fills cols (centred in train mode), xhat and dy = dL/d(batch-norm output)
  // for electrodes [c0, c0 + nc) of trial n.
  auto tile_pass = [&](Index n, Index c0, Index nc) {
    const Index span = nc * conv_len;
    detail::im2col_rows(x.sample(n).data() + c0 * x.cols(), nc, x.cols(), width, cols);
    if (train) cols.colwise() -= center;
    xhat.noalias() = w * cols;
    dy.resize(kernels, span);
    for (Index f = 0; f < kernels; ++f) {
      auto xr = xhat.row(f).array();
      xr = (xr + offset[f]) * inv_std[f];
      act_grad = elu((xr * bn.gamma[f] + bn.beta[f]).eval());
      act_grad = act_grad.min(S(0)) + S(1);
      for (Index c = 0; c < nc; ++c) {
        const S* g = d_out.data() + ((n * kernels + f) * chans + c0 + c) * out_len;
        S* d = dy.data() + f * span + c * conv_len;
        const S* ag = act_grad.data() + c * conv_len;
        delta.setZero();
        for (Index j = 0; j < out_len; ++j) {
          delta[j * pool_stride] += g[j] * inv_pool;
          delta[j * pool_stride + pool_kernel] -= g[j] * inv_pool;
        }
        S running(0);
        for (Index t = 0; t < conv_len; ++t) {
          running += delta[t];
          d[t] = running * ag[t];
        }
      }
    }
  };
  auto scatter_input = [&](Index n, Index c0, Index nc) {
    d_cols.noalias() = w.transpose() * dy;
    detail::col2im_rows(d_cols, nc, x.cols(), width,
                        grad.d_input.sample(n).data() + c0 * x.cols());
  };

  Vector<double> sum_dy = Vector<double>::Zero(kernels);
  Vector<double> sum_dy_xh = Vector<double>::Zero(kernels);
  Matrix<S> acc = Matrix<S>::Zero(kernels, width);
  Vector<double> d_bias = Vector<double>::Zero(kernels);
  if (input_grad) grad.d_input = Tensor4<S>(x.batch(), 1, chans, x.cols());

  for (Index n = 0; n < x.batch(); ++n) {
    for (Index c0 = 0; c0 < chans; c0 += tile) {
      const Index nc = std::min(tile, chans - c0);
      tile_pass(n, c0, nc);
      for (Index f = 0; f < kernels; ++f) {
        sum_dy[f] += double(dy.row(f).sum());
        sum_dy_xh[f] += double(dy.row(f).dot(xhat.row(f)));
      }
      if (!train) {
        // dz = gamma * inv_std * dy
        for (Index f = 0; f < kernels; ++f) dy.row(f) *= bn.gamma[f] * inv_std[f];
        for (Index f = 0; f < kernels; ++f) d_bias[f] += double(dy.row(f).sum());
        if (input_grad) scatter_input(n, c0, nc);
      }
      acc.noalias() += dy * cols.transpose();
    }
  }
  grad.d_gamma = sum_dy_xh.template cast<S>();
  grad.d_beta = sum_dy.template cast<S>();

  if (!train) {
    grad.d_w = acc;
    grad.d_b = d_bias.template cast<S>();
    return grad;
  }

  // dz = g (dy - mean(dy) - x_hat mean(dy x_hat)), g = gamma inv_std.  Over
  // centred windows the mean(dy) term drops out of dW, and sum(dz) = 0.
  const Matrix<double> wd = w.template cast<double>();
  const Matrix<double> cov_w = wd * cache.window_cov;  // (k, m1)
  Matrix<double> d_w = acc.template cast<double>();
  Vector<S> g(kernels), mean_dy(kernels), mean_dy_xh(kernels);
  for (Index f = 0; f < kernels; ++f) {
    const double gf = double(bn.gamma[f]) * double(inv_std[f]);
    const double mxh = sum_dy_xh[f] / count;
    d_w.row(f) = gf * (d_w.row(f) - mxh * double(inv_std[f]) * count * cov_w.row(f));
    g[f] = S(gf);
    mean_dy[f] = S(sum_dy[f] / count);
    mean_dy_xh[f] = S(mxh);
  }
  grad.d_w = d_w.template cast<S>();
  grad.d_b = Vector<S>::Zero(kernels);

  if (input_grad) {
    for (Index n = 0; n < x.batch(); ++n) {
      for (Index c0 = 0; c0 < chans; c0 += tile) {
        const Index nc = std::min(tile, chans - c0);
        tile_pass(n, c0, nc);
        for (Index f = 0; f < kernels; ++f) {
          dy.row(f) =
              ((dy.row(f).array() - mean_dy[f]) - xhat.row(f).array() * mean_dy_xh[f]) * g[f];
        }
        scatter_input(n, c0, nc);
      }
    }
  }
  return grad;
}

}  // namespace nicekit

#endif  // NICE_TEMPORAL_BLOCK_HPP
