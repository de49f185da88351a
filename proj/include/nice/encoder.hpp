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

// Temporal-spatial convolutional EEG encoder:
//
//   [SA | GA] -> temporal conv -> BN -> ELU -> avg pool
//             -> spatial conv  -> BN -> ELU -> flatten -> linear (D)
//
// Parameters are a plain record templated on the scalar.  Training runs in
// float; gradient checks instantiate the same code in double.

#ifndef NICE_ENCODER_HPP
#define NICE_ENCODER_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "nice/attention.hpp"
#include "nice/layers.hpp"
#include "nice/temporal_block.hpp"

namespace nicekit {

enum class SpatialModule { None, SelfAttention, GraphAttention };

std::string to_string(SpatialModule module);
SpatialModule parse_spatial_module(std::string_view name);

struct HyperParams {
  Index kernels = 40;          // k
  Index temporal_kernel = 25;  // m1
  Index pool_kernel = 51;      // m2
  Index pool_stride = 5;       // s2
  Index channels = 0;          // C, from data
  Index samples = 0;           // T, from data
  Index feature_dim = 0;       // D, from the feature bank
  SpatialModule spatial = SpatialModule::None;
  bool ga_residual = true;

  Index conv_length() const { return samples - temporal_kernel + 1; }
  Index pooled_length() const { return nicekit::pooled_length(conv_length(), pool_kernel, pool_stride); }
  Index flatten_width() const { return kernels * pooled_length(); }

  void validate() const;
  bool operator==(const HyperParams&) const = default;
};

inline constexpr double kInitialTemperature = 1.0 / 0.07;

template <typename S>
struct EncoderParams {
  using Scalar = S;
  using Module = std::variant<std::monostate, SelfAttention<S>, GraphAttention<S>>;

  Matrix<S> temporal_w;  // (k, m1)
  Vector<S> temporal_b;  // (k)
  BatchNorm<S> bn1;
  Matrix<S> spatial_w;   // (k, k * C)
  Vector<S> spatial_b;   // (k)
  BatchNorm<S> bn2;
  Matrix<S> proj_w;      // (k * L_pool, D)
  Vector<S> proj_b;      // (D)
  S log_temperature = S(0);  // similarity multiplier is exp(log_temperature)
  Module module;

  S temperature() const { return std::exp(log_temperature); }

  SpatialModule module_kind() const {
    if (std::holds_alternative<SelfAttention<S>>(module)) return SpatialModule::SelfAttention;
    if (std::holds_alternative<GraphAttention<S>>(module)) return SpatialModule::GraphAttention;
    return SpatialModule::None;
  }

  template <typename Other>
  EncoderParams<Other> cast() const {
    EncoderParams<Other> out;
    out.temporal_w = temporal_w.template cast<Other>();
    out.temporal_b = temporal_b.template cast<Other>();
    out.bn1 = bn1.template cast<Other>();
    out.spatial_w = spatial_w.template cast<Other>();
    out.spatial_b = spatial_b.template cast<Other>();
    out.bn2 = bn2.template cast<Other>();
    out.proj_w = proj_w.template cast<Other>();
    out.proj_b = proj_b.template cast<Other>();
    out.log_temperature = Other(log_temperature);
    if (auto* sa = std::get_if<SelfAttention<S>>(&module)) {
      out.module = sa->template cast<Other>();
    } else if (auto* ga = std::get_if<GraphAttention<S>>(&module)) {
      out.module = ga->template cast<Other>();
    }
    return out;
  }
};

// Visits every tensor of a parameter record in a fixed order as
// fn(name, span, rows, cols, learnable).  Running statistics are the only
// non-learnable entries.  Constness of `params` carries over to the spans.
template <typename Params, typename Fn>
void for_each_tensor(Params& params, Fn&& fn) {
  using S = typename std::remove_const_t<Params>::Scalar;
  auto emit = [&](std::string_view name, auto& m, bool learnable) {
    using Elem = std::remove_reference_t<decltype(*m.data())>;
    fn(name, std::span<Elem>(m.data(), static_cast<std::size_t>(m.size())), m.rows(), m.cols(),
       learnable);
  };
  if (auto* sa = std::get_if<SelfAttention<S>>(&params.module)) {
    emit("sa.wq", sa->wq, true);
    emit("sa.wk", sa->wk, true);
    emit("sa.wv", sa->wv, true);
  } else if (auto* ga = std::get_if<GraphAttention<S>>(&params.module)) {
    emit("ga.w", ga->w, true);
    emit("ga.a", ga->a, true);
  }
  emit("temporal.w", params.temporal_w, true);
  emit("temporal.b", params.temporal_b, true);
  emit("bn1.gamma", params.bn1.gamma, true);
  emit("bn1.beta", params.bn1.beta, true);
  emit("bn1.running_mean", params.bn1.running_mean, false);
  emit("bn1.running_var", params.bn1.running_var, false);
  emit("spatial.w", params.spatial_w, true);
  emit("spatial.b", params.spatial_b, true);
  emit("bn2.gamma", params.bn2.gamma, true);
  emit("bn2.beta", params.bn2.beta, true);
  emit("bn2.running_mean", params.bn2.running_mean, false);
  emit("bn2.running_var", params.bn2.running_var, false);
  emit("proj.w", params.proj_w, true);
  emit("proj.b", params.proj_b, true);
  using TempElem = std::remove_reference_t<decltype((params.log_temperature))>;
  fn(std::string_view("log_temperature"), std::span<TempElem>(&params.log_temperature, 1),
     Index{1}, Index{1}, true);
}

template <typename S>
EncoderParams<S> zeros_like(const EncoderParams<S>& params) {
  EncoderParams<S> out = params;
  for_each_tensor(out, [](std::string_view, std::span<S> values, Index, Index, bool) {
    std::fill(values.begin(), values.end(), S(0));
  });
  return out;
}

template <typename S>
Index learnable_count(const EncoderParams<S>& params) {
  Index total = 0;
  for_each_tensor(params, [&](std::string_view, std::span<const S> v, Index, Index, bool learn) {
    if (learn) total += static_cast<Index>(v.size());
  });
  return total;
}

// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); BN gamma = 1,
// beta = 0; exp(log_temperature) = 1 / 0.07.
template <typename S>
EncoderParams<S> init_params(const HyperParams& hp, std::uint64_t seed) {
  hp.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](Index rows, Index cols, Index fan_in) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix<S> m(rows, cols);
    // Column-major fill order keeps the stream layout stable across platforms.
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = S(dist(rng));
    return m;
  };
  const Index k = hp.kernels;
  const Index t = hp.samples;
  EncoderParams<S> p;
  if (hp.spatial == SpatialModule::SelfAttention) {
    SelfAttention<S> sa{uniform(t, t, t), uniform(t, t, t), uniform(t, t, t)};
    p.module = std::move(sa);
  } else if (hp.spatial == SpatialModule::GraphAttention) {
    GraphAttention<S> ga{uniform(t, t, t), uniform(2 * t, 1, 2 * t)};
    p.module = std::move(ga);
  }
  p.temporal_w = uniform(k, hp.temporal_kernel, hp.temporal_kernel);
  p.temporal_b = uniform(k, 1, hp.temporal_kernel);
  p.bn1 = BatchNorm<S>::Identity(k);
  p.spatial_w = uniform(k, k * hp.channels, k * hp.channels);
  p.spatial_b = uniform(k, 1, k * hp.channels);
  p.bn2 = BatchNorm<S>::Identity(k);
  p.proj_w = uniform(hp.flatten_width(), hp.feature_dim, hp.flatten_width());
  p.proj_b = uniform(hp.feature_dim, 1, hp.flatten_width());
  p.log_temperature = S(std::log(kInitialTemperature));
  return p;
}

// Throws DimensionError when the record does not match the hyperparameters.
template <typename S>
void check_consistent(const EncoderParams<S>& p, const HyperParams& hp) {
  hp.validate();
  auto expect = [](bool ok, const char* what) {
    if (!ok) throw DimensionError(std::string("encoder parameters inconsistent: ") + what);
  };
  const Index k = hp.kernels;
  expect(p.temporal_w.rows() == k && p.temporal_w.cols() == hp.temporal_kernel, "temporal.w");
  expect(p.temporal_b.size() == k, "temporal.b");
  expect(p.bn1.gamma.size() == k && p.bn2.gamma.size() == k, "batch norm width");
  expect(p.spatial_w.rows() == k && p.spatial_w.cols() == k * hp.channels, "spatial.w");
  expect(p.spatial_b.size() == k, "spatial.b");
  expect(p.proj_w.rows() == hp.flatten_width() && p.proj_w.cols() == hp.feature_dim, "proj.w");
  expect(p.proj_b.size() == hp.feature_dim, "proj.b");
  expect(p.module_kind() == hp.spatial, "spatial module kind");
  if (auto* sa = std::get_if<SelfAttention<S>>(&p.module)) {
    expect(sa->wq.rows() == hp.samples && sa->wq.cols() == hp.samples, "sa.wq");
    expect(sa->wk.rows() == hp.samples && sa->wv.rows() == hp.samples, "sa.wk/sa.wv");
  }
  if (auto* ga = std::get_if<GraphAttention<S>>(&p.module)) {
    expect(ga->w.rows() == hp.samples && ga->a.size() == 2 * hp.samples, "ga");
  }
  expect(std::isfinite(double(p.log_temperature)), "log_temperature");
}

template <typename S>
struct EncoderCache {
  Mode mode = Mode::Eval;
  Tensor4<S> input;       // (b, 1, C, T)
  Tensor4<S> module_out;  // input of the temporal convolution
  TemporalBlockCache<S> block1;  // temporal conv, bn1, elu, pool
  Tensor4<S> pooled;      // (b, k, C, L_pool)
  BatchNormCache<S> bn2;
  Tensor4<S> act2;        // (b, k, 1, L_pool)
  Matrix<S> flat;         // (b, k * L_pool)
};

template <typename S>
Tensor4<S> apply_spatial_module(const EncoderParams<S>& p, const HyperParams& hp,
                                const Tensor4<S>& x) {
  if (auto* sa = std::get_if<SelfAttention<S>>(&p.module)) return sa_forward(x, *sa);
  if (auto* ga = std::get_if<GraphAttention<S>>(&p.module)) return ga_forward(x, *ga, hp.ga_residual);
  return x;
}

// Unnormalized EEG features (b, D).
template <typename S>
Matrix<S> encode(const EncoderParams<S>& p, const HyperParams& hp, const Tensor4<S>& x, Mode mode,
                 EncoderCache<S>* cache = nullptr) {
  if (x.maps() != 1 || x.rows() != hp.channels || x.cols() != hp.samples) {
    throw DimensionError("encoder expects (b, 1, " + std::to_string(hp.channels) + ", " +
                         std::to_string(hp.samples) + "), got " + x.shape());
  }
  Tensor4<S> h = apply_spatial_module(p, hp, x);
  Tensor4<S> pooled = temporal_block(h, p.temporal_w, p.temporal_b, p.bn1, hp.pool_kernel,
                                     hp.pool_stride, mode, cache ? &cache->block1 : nullptr);
  Tensor4<S> a2 = batch_norm(spatial_conv(pooled, p.spatial_w, p.spatial_b), p.bn2, mode,
                             cache ? &cache->bn2 : nullptr);
  a2.flat().array() = elu(a2.flat().array());
  Matrix<S> flat = flatten(a2);
  Matrix<S> out = linear(flat, p.proj_w, p.proj_b);
  if (cache) {
    cache->mode = mode;
    cache->input = x;
    cache->module_out = std::move(h);
    cache->pooled = std::move(pooled);
    cache->act2 = std::move(a2);
    cache->flat = std::move(flat);
  }
  return out;
}

template <typename S>
struct EncoderGrad {
  EncoderParams<S> params;  // log_temperature entry is left at zero
  Tensor4<S> d_module_out;  // filled when input gradients were requested
  Tensor4<S> d_input;
};

// Backpropagates d_out = dL/d(features) through a cached forward pass.
template <typename S>
EncoderGrad<S> encode_backward(const EncoderParams<S>& p, const HyperParams& hp,
                               const EncoderCache<S>& cache, const Matrix<S>& d_out,
                               bool input_grad = false) {
  EncoderGrad<S> g;
  g.params = zeros_like(p);

  auto proj = linear_backward(cache.flat, p.proj_w, d_out);
  g.params.proj_w = std::move(proj.d_params[0]);
  g.params.proj_b = proj.d_params[1];

  Tensor4<S> d_act2 = unflatten(proj.d_input, hp.kernels, 1, hp.pooled_length());
  auto bn2 = batch_norm_backward(elu_backward(cache.act2, d_act2), p.bn2, cache.bn2);
  g.params.bn2.gamma = bn2.d_params[0];
  g.params.bn2.beta = bn2.d_params[1];

  auto spatial = spatial_conv_backward(cache.pooled, p.spatial_w, bn2.d_input);
  g.params.spatial_w = std::move(spatial.d_params[0]);
  g.params.spatial_b = spatial.d_params[1];

  const bool has_module = p.module_kind() != SpatialModule::None;
  auto temporal = temporal_block_backward(cache.module_out, p.temporal_w, p.temporal_b, p.bn1,
                                          hp.pool_kernel, hp.pool_stride, cache.block1,
                                          spatial.d_input, input_grad || has_module);
  g.params.bn1.gamma = std::move(temporal.d_gamma);
  g.params.bn1.beta = std::move(temporal.d_beta);
  g.params.temporal_w = std::move(temporal.d_w);
  g.params.temporal_b = std::move(temporal.d_b);

  if (auto* sa = std::get_if<SelfAttention<S>>(&p.module)) {
    auto m = sa_backward(cache.input, *sa, temporal.d_input);
    auto& gs = std::get<SelfAttention<S>>(g.params.module);
    gs.wq = std::move(m.d_params[0]);
    gs.wk = std::move(m.d_params[1]);
    gs.wv = std::move(m.d_params[2]);
    if (input_grad) g.d_input = std::move(m.d_input);
  } else if (auto* ga = std::get_if<GraphAttention<S>>(&p.module)) {
    auto m = ga_backward(cache.input, *ga, temporal.d_input, hp.ga_residual);
    auto& gg = std::get<GraphAttention<S>>(g.params.module);
    gg.w = std::move(m.d_params[0]);
    gg.a = m.d_params[1];
    if (input_grad) g.d_input = std::move(m.d_input);
  } else if (input_grad) {
    g.d_input = temporal.d_input;
  }
  if (input_grad) g.d_module_out = std::move(temporal.d_input);
  return g;
}

// Eval-mode features for a large set, encoded in chunks to bound memory.
template <typename S>
Matrix<S> encode_chunked(const EncoderParams<S>& p, const HyperParams& hp, const Tensor4<S>& x,
                         Index chunk = 128) {
  Matrix<S> out(x.batch(), hp.feature_dim);
  const Index plane = x.rows() * x.cols();
  for (Index start = 0; start < x.batch(); start += chunk) {
    const Index n = std::min(chunk, x.batch() - start);
    Tensor4<S> part(n, 1, x.rows(), x.cols());
    part.flat() = x.flat().segment(start * plane, n * plane);
    out.middleRows(start, n) = encode(p, hp, part, Mode::Eval);
  }
  return out;
}

// Checkpoint file: magic "NICE", u32 version, u64-length JSON header with the
// hyperparameters, u64 tensor count, then per tensor: u32 name length, name
// bytes, u32 rank, u64 dims, f32 payload.  All integers little-endian.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& params,
                     const HyperParams& hp);

struct Checkpoint {
  HyperParams hyper;
  EncoderParams<float> params;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nicekit

#endif  // NICE_ENCODER_HPP
