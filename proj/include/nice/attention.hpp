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

// Spatial plug-in modules applied to one (C, T) trial before the temporal
// convolution.  Electrodes are tokens; every projection is a (T, T) map along
// the time axis shared by all electrodes, so both modules are permutation
// equivariant over electrodes.

#ifndef NICE_ATTENTION_HPP
#define NICE_ATTENTION_HPP

#include <cmath>

#include "nice/layers.hpp"

namespace nicekit {

template <typename Scalar>
struct SelfAttention {
  Matrix<Scalar> wq;
  Matrix<Scalar> wk;
  Matrix<Scalar> wv;

  Index samples() const { return wq.rows(); }

  template <typename Other>
  SelfAttention<Other> cast() const {
    return {wq.template cast<Other>(), wk.template cast<Other>(), wv.template cast<Other>()};
  }
};

template <typename Scalar>
struct GraphAttention {
  Matrix<Scalar> w;  // (T, T), shared by all nodes
  Vector<Scalar> a;  // (2T): source half then neighbour half

  Index samples() const { return w.rows(); }

  template <typename Other>
  GraphAttention<Other> cast() const {
    return {w.template cast<Other>(), a.template cast<Other>()};
  }
};

namespace detail {

template <typename Scalar, typename Derived>
void check_trial_shape(const Eigen::MatrixBase<Derived>& x, Index samples, const char* who) {
  if (x.cols() != samples) {
    throw DimensionError(std::string(who) + ": trial has " + std::to_string(x.cols()) +
                         " samples, module expects " + std::to_string(samples));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Self-attention: x + softmax(Q K^T / sqrt(T)) V, with Q = x Wq^T etc.

template <typename Scalar>
Matrix<Scalar> sa_attention(const Matrix<Scalar>& x, const SelfAttention<Scalar>& sa) {
  detail::check_trial_shape<Scalar>(x, sa.samples(), "sa_forward");
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(x.cols()));
  Matrix<Scalar> q = x * sa.wq.transpose();
  Matrix<Scalar> k = x * sa.wk.transpose();
  return softmax_rows<Scalar>((q * k.transpose()) * scale);
}

template <typename Scalar>
Matrix<Scalar> sa_forward(const Matrix<Scalar>& x, const SelfAttention<Scalar>& sa) {
  Matrix<Scalar> attn = sa_attention(x, sa);
  Matrix<Scalar> v = x * sa.wv.transpose();
  return x + attn * v;
}

// d_params = {d_wq, d_wk, d_wv}.
template <typename Scalar>
LayerGrad<Scalar, Matrix<Scalar>> sa_backward(const Matrix<Scalar>& x,
                                              const SelfAttention<Scalar>& sa,
                                              const Matrix<Scalar>& d_out) {
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(x.cols()));
  Matrix<Scalar> q = x * sa.wq.transpose();
  Matrix<Scalar> k = x * sa.wk.transpose();
  Matrix<Scalar> v = x * sa.wv.transpose();
  Matrix<Scalar> attn = softmax_rows<Scalar>((q * k.transpose()) * scale);

  Matrix<Scalar> d_attn = d_out * v.transpose();
  Matrix<Scalar> d_v = attn.transpose() * d_out;
  Matrix<Scalar> d_scores = softmax_rows_backward(attn, d_attn) * scale;
  Matrix<Scalar> d_q = d_scores * k;
  Matrix<Scalar> d_k = d_scores.transpose() * q;

  LayerGrad<Scalar, Matrix<Scalar>> grad;
  grad.d_input = d_out + d_q * sa.wq + d_k * sa.wk + d_v * sa.wv;
  grad.d_params.push_back(d_q.transpose() * x);
  grad.d_params.push_back(d_k.transpose() * x);
  grad.d_params.push_back(d_v.transpose() * x);
  return grad;
}

// ---------------------------------------------------------------------------
// Graph attention over the fully connected electrode graph (self loop
// included).  alpha(i, j) = softmax_j LeakyReLU(a_src . h_i + a_dst . h_j),
// h = x W^T, n'_i = sum_j alpha(i, j) h_j.

template <typename Scalar>
Matrix<Scalar> ga_coefficients(const Matrix<Scalar>& x, const GraphAttention<Scalar>& ga) {
  detail::check_trial_shape<Scalar>(x, ga.samples(), "ga_forward");
  if (ga.a.size() != 2 * ga.samples()) {
    throw DimensionError("ga_forward: attention vector must have 2T entries");
  }
  const Index t = ga.samples();
  Matrix<Scalar> h = x * ga.w.transpose();
  Vector<Scalar> src = h * ga.a.head(t);
  Vector<Scalar> dst = h * ga.a.tail(t);
  Matrix<Scalar> logits = src.replicate(1, x.rows());
  logits.rowwise() += dst.transpose();
  return softmax_rows<Scalar>(leaky_relu(logits.array()).matrix());
}

template <typename Scalar>
Matrix<Scalar> ga_forward(const Matrix<Scalar>& x, const GraphAttention<Scalar>& ga,
                          bool residual = true) {
  Matrix<Scalar> alpha = ga_coefficients(x, ga);
  Matrix<Scalar> out = alpha * (x * ga.w.transpose());
  if (residual) out += x;
  return out;
}

// d_params = {d_w, d_a}.
template <typename Scalar>
LayerGrad<Scalar, Matrix<Scalar>> ga_backward(const Matrix<Scalar>& x,
                                              const GraphAttention<Scalar>& ga,
                                              const Matrix<Scalar>& d_out, bool residual = true) {
  const Index t = ga.samples();
  Matrix<Scalar> h = x * ga.w.transpose();
  Vector<Scalar> src = h * ga.a.head(t);
  Vector<Scalar> dst = h * ga.a.tail(t);
  Matrix<Scalar> logits = src.replicate(1, x.rows());
  logits.rowwise() += dst.transpose();
  Matrix<Scalar> alpha = softmax_rows<Scalar>(leaky_relu(logits.array()).matrix());

  Matrix<Scalar> d_alpha = d_out * h.transpose();
  Matrix<Scalar> d_h = alpha.transpose() * d_out;
  Matrix<Scalar> d_act = softmax_rows_backward(alpha, d_alpha);
  Matrix<Scalar> d_logits =
      (logits.array() > 0).select(d_act.array(), d_act.array() * Scalar(kLeakySlope)).matrix();
  Vector<Scalar> d_src = d_logits.rowwise().sum();
  Vector<Scalar> d_dst = d_logits.colwise().sum().transpose();
  d_h += d_src * ga.a.head(t).transpose() + d_dst * ga.a.tail(t).transpose();

  LayerGrad<Scalar, Matrix<Scalar>> grad;
  grad.d_input = d_h * ga.w;
  if (residual) grad.d_input += d_out;
  grad.d_params.push_back(d_h.transpose() * x);
  Vector<Scalar> d_a(2 * t);
  d_a.head(t) = h.transpose() * d_src;
  d_a.tail(t) = h.transpose() * d_dst;
  grad.d_params.push_back(d_a);
  return grad;
}

// ---------------------------------------------------------------------------
// Batched wrappers over (b, 1, C, T).

template <typename Scalar, typename Module, typename Fn>
Tensor4<Scalar> map_trials(const Tensor4<Scalar>& x, Fn&& fn) {
  if (x.maps() != 1) throw DimensionError("spatial module expects (b, 1, C, T), got " + x.shape());
  Tensor4<Scalar> out(x.batch(), 1, x.rows(), x.cols());
  for (Index n = 0; n < x.batch(); ++n) {
    Matrix<Scalar> trial = x.sample(n);
    out.sample(n) = fn(trial);
  }
  return out;
}

template <typename Scalar>
Tensor4<Scalar> sa_forward(const Tensor4<Scalar>& x, const SelfAttention<Scalar>& sa) {
  return map_trials<Scalar, SelfAttention<Scalar>>(
      x, [&](const Matrix<Scalar>& trial) { return sa_forward(trial, sa); });
}

template <typename Scalar>
Tensor4<Scalar> ga_forward(const Tensor4<Scalar>& x, const GraphAttention<Scalar>& ga,
                           bool residual = true) {
  return map_trials<Scalar, GraphAttention<Scalar>>(
      x, [&](const Matrix<Scalar>& trial) { return ga_forward(trial, ga, residual); });
}

template <typename Scalar>
LayerGrad<Scalar> sa_backward(const Tensor4<Scalar>& x, const SelfAttention<Scalar>& sa,
                              const Tensor4<Scalar>& d_out) {
  LayerGrad<Scalar> grad;
  grad.d_input = Tensor4<Scalar>(x.batch(), 1, x.rows(), x.cols());
  grad.d_params = {Matrix<Scalar>::Zero(sa.wq.rows(), sa.wq.cols()),
                   Matrix<Scalar>::Zero(sa.wk.rows(), sa.wk.cols()),
                   Matrix<Scalar>::Zero(sa.wv.rows(), sa.wv.cols())};
  for (Index n = 0; n < x.batch(); ++n) {
    auto g = sa_backward<Scalar>(x.sample(n), sa, d_out.sample(n));
    grad.d_input.sample(n) = g.d_input;
    for (std::size_t p = 0; p < 3; ++p) grad.d_params[p] += g.d_params[p];
  }
  return grad;
}

template <typename Scalar>
LayerGrad<Scalar> ga_backward(const Tensor4<Scalar>& x, const GraphAttention<Scalar>& ga,
                              const Tensor4<Scalar>& d_out, bool residual = true) {
  LayerGrad<Scalar> grad;
  grad.d_input = Tensor4<Scalar>(x.batch(), 1, x.rows(), x.cols());
  grad.d_params = {Matrix<Scalar>::Zero(ga.w.rows(), ga.w.cols()),
                   Matrix<Scalar>::Zero(ga.a.size(), 1)};
  for (Index n = 0; n < x.batch(); ++n) {
    auto g = ga_backward<Scalar>(x.sample(n), ga, d_out.sample(n), residual);
    grad.d_input.sample(n) = g.d_input;
    grad.d_params[0] += g.d_params[0];
    grad.d_params[1] += g.d_params[1];
  }
  return grad;
}

}  // namespace nicekit

#endif  // NICE_ATTENTION_HPP
