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

#include "nice/gradcheck.hpp"

#include "nice/attention.hpp"
#include "nice/contrastive.hpp"
#include "nice/encoder.hpp"
#include "nice/layers.hpp"

namespace nicekit {

namespace {

using T4 = Tensor4<double>;
using Mat = Matrix<double>;
using Vec = Vector<double>;

class Filler {
 public:
  explicit Filler(std::uint64_t seed) : rng_(seed) {}

  template <typename Derived>
  void normal(Eigen::PlainObjectBase<Derived>& m, double scale = 1.0) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * dist_(rng_);
  }
  void normal(T4& t, double scale = 1.0) {
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = scale * dist_(rng_);
  }
  Mat mat(Index r, Index c, double scale = 1.0) {
    Mat m(r, c);
    normal(m, scale);
    return m;
  }
  Vec vec(Index n, double scale = 1.0) {
    Vec v(n);
    normal(v, scale);
    return v;
  }
  T4 tensor(Index b, Index m, Index r, Index c, double scale = 1.0) {
    T4 t(b, m, r, c);
    normal(t, scale);
    return t;
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

// Scalar test loss sum(R .* y) for a fixed random projection R.
double project(const T4& y, const T4& r) { return y.flat().dot(r.flat()); }
double project(const Mat& y, const Mat& r) { return (y.array() * r.array()).sum(); }

GradCheckReport check_temporal_conv(Filler& fill, const GradCheckOptions& opt) {
  T4 x = fill.tensor(2, 1, 3, 12);
  Mat w = fill.mat(3, 5, 0.5);
  Vec b = fill.vec(3);
  const T4 r = fill.tensor(2, 3, 3, 8);
  auto g = temporal_conv_backward(x, w, r);
  return check_gradients(
      "temporal_conv", [&] { return project(temporal_conv(x, w, b), r); },
      {{"input", as_span(x), as_span(g.d_input)},
       {"weight", as_span(w), as_span(g.d_params[0])},
       {"bias", as_span(b), as_span(g.d_params[1])}},
      opt);
}

GradCheckReport check_avg_pool(Filler& fill, const GradCheckOptions& opt) {
  T4 x = fill.tensor(2, 3, 2, 20);
  const Index out_len = pooled_length(20, 7, 3);
  const T4 r = fill.tensor(2, 3, 2, out_len);
  T4 d_in = avg_pool_backward(r, 20, 7, 3);
  return check_gradients(
      "avg_pool", [&] { return project(avg_pool(x, 7, 3), r); },
      {{"input", as_span(x), as_span(d_in)}}, opt);
}

GradCheckReport check_spatial_conv(Filler& fill, const GradCheckOptions& opt) {
  T4 x = fill.tensor(2, 3, 4, 6);
  Mat w = fill.mat(3, 12, 0.5);
  Vec b = fill.vec(3);
  const T4 r = fill.tensor(2, 3, 1, 6);
  auto g = spatial_conv_backward(x, w, r);
  return check_gradients(
      "spatial_conv", [&] { return project(spatial_conv(x, w, b), r); },
      {{"input", as_span(x), as_span(g.d_input)},
       {"weight", as_span(w), as_span(g.d_params[0])},
       {"bias", as_span(b), as_span(g.d_params[1])}},
      opt);
}

GradCheckReport check_batch_norm(Filler& fill, Mode mode, const GradCheckOptions& opt) {
  T4 x = fill.tensor(4, 3, 2, 5);
  BatchNorm<double> bn = BatchNorm<double>::Identity(3);
  bn.gamma = fill.vec(3) + Vec::Constant(3, 1.5);
  bn.beta = fill.vec(3);
  bn.running_mean = fill.vec(3, 0.3);
  bn.running_var = fill.vec(3).cwiseAbs() + Vec::Constant(3, 0.5);
  const T4 r = fill.tensor(4, 3, 2, 5);
  BatchNormCache<double> cache;
  batch_norm(x, bn, mode, &cache);
  auto g = batch_norm_backward(r, bn, cache);
  return check_gradients(
      mode == Mode::Train ? "batch_norm/train" : "batch_norm/eval",
      [&] { return project(batch_norm(x, bn, mode), r); },
      {{"input", as_span(x), as_span(g.d_input)},
       {"gamma", as_span(bn.gamma), as_span(g.d_params[0])},
       {"beta", as_span(bn.beta), as_span(g.d_params[1])}},
      opt);
}

GradCheckReport check_elu(Filler& fill, const GradCheckOptions& opt) {
  T4 x = fill.tensor(2, 2, 3, 4, 2.0);
  const T4 r = fill.tensor(2, 2, 3, 4);
  T4 d_in = elu_backward(elu(x), r);
  return check_gradients(
      "elu", [&] { return project(elu(x), r); }, {{"input", as_span(x), as_span(d_in)}}, opt);
}

GradCheckReport check_linear(Filler& fill, const GradCheckOptions& opt) {
  Mat x = fill.mat(4, 7);
  Mat w = fill.mat(7, 5, 0.5);
  Vec b = fill.vec(5);
  const Mat r = fill.mat(4, 5);
  auto g = linear_backward(x, w, r);
  return check_gradients(
      "linear", [&] { return project(linear(x, w, b), r); },
      {{"input", as_span(x), as_span(g.d_input)},
       {"weight", as_span(w), as_span(g.d_params[0])},
       {"bias", as_span(b), as_span(g.d_params[1])}},
      opt);
}

GradCheckReport check_softmax(Filler& fill, const GradCheckOptions& opt) {
  Mat x = fill.mat(4, 6, 2.0);
  const Mat r = fill.mat(4, 6);
  Mat d_in = softmax_rows_backward(softmax_rows(x), r);
  return check_gradients(
      "softmax", [&] { return project(softmax_rows(x), r); },
      {{"input", as_span(x), as_span(d_in)}}, opt);
}

GradCheckReport check_self_attention(Filler& fill, const GradCheckOptions& opt) {
  const Index t = 8;
  T4 x = fill.tensor(2, 1, 4, t);
  SelfAttention<double> sa{fill.mat(t, t, 0.4), fill.mat(t, t, 0.4), fill.mat(t, t, 0.4)};
  const T4 r = fill.tensor(2, 1, 4, t);
  auto g = sa_backward(x, sa, r);
  return check_gradients(
      "self_attention", [&] { return project(sa_forward(x, sa), r); },
      {{"input", as_span(x), as_span(g.d_input)},
       {"wq", as_span(sa.wq), as_span(g.d_params[0])},
       {"wk", as_span(sa.wk), as_span(g.d_params[1])},
       {"wv", as_span(sa.wv), as_span(g.d_params[2])}},
      opt);
}

GradCheckReport check_graph_attention(Filler& fill, bool residual, const GradCheckOptions& opt) {
  const Index t = 8;
  T4 x = fill.tensor(2, 1, 4, t);
  GraphAttention<double> ga{fill.mat(t, t, 0.4), fill.vec(2 * t, 0.4)};
  const T4 r = fill.tensor(2, 1, 4, t);
  auto g = ga_backward(x, ga, r, residual);
  return check_gradients(
      residual ? "graph_attention" : "graph_attention/no_residual",
      [&] { return project(ga_forward(x, ga, residual), r); },
      {{"input", as_span(x), as_span(g.d_input)},
       {"w", as_span(ga.w), as_span(g.d_params[0])},
       {"a", as_span(ga.a), as_span(g.d_params[1])}},
      opt);
}

GradCheckReport check_info_nce(Filler& fill, const GradCheckOptions& opt) {
  const Index b = 5;
  const Index d = 6;
  Mat eeg = fill.mat(b, d);
  const Mat image = normalize_rows(fill.mat(b, d));
  Vec log_t = Vec::Constant(1, std::log(3.0));
  auto loss = [&] { return info_nce(normalize_rows(eeg), image, log_t[0]).loss; };
  const Mat u = normalize_rows(eeg);
  auto fwd = info_nce(u, image, log_t[0]);
  auto g = info_nce_backward(fwd, image, log_t[0]);
  Mat d_eeg = normalize_rows_backward(eeg, u, g.d_eeg);
  Vec d_t = Vec::Constant(1, g.d_log_temperature);
  return check_gradients("info_nce", loss,
                         {{"eeg", as_span(eeg), as_span(d_eeg)},
                          {"log_temperature", as_span(log_t), as_span(d_t)}},
                         opt);
}

// In train mode the biases feeding a batch norm have an identically zero
// gradient, so they are only checked in eval mode.
GradCheckReport check_encoder(Filler& fill, SpatialModule module, Mode mode, std::uint64_t seed,
                              const GradCheckOptions& opt) {
  HyperParams hp;
  hp.kernels = 3;
  hp.temporal_kernel = 5;
  hp.pool_kernel = 7;
  hp.pool_stride = 3;
  hp.channels = 4;
  hp.samples = 40;
  hp.feature_dim = 6;
  hp.spatial = module;
  auto p = init_params<double>(hp, seed);
  // Non-trivial affine parameters so every path carries signal.
  p.bn1.gamma = fill.vec(hp.kernels, 0.3) + Vec::Ones(hp.kernels);
  p.bn1.beta = fill.vec(hp.kernels, 0.3);
  p.bn2.gamma = fill.vec(hp.kernels, 0.3) + Vec::Ones(hp.kernels);
  p.bn2.beta = fill.vec(hp.kernels, 0.3);
  p.bn1.running_mean = fill.vec(hp.kernels, 0.3);
  p.bn1.running_var = fill.vec(hp.kernels).cwiseAbs() + Vec::Constant(hp.kernels, 0.5);
  p.bn2.running_mean = fill.vec(hp.kernels, 0.3);
  p.bn2.running_var = fill.vec(hp.kernels).cwiseAbs() + Vec::Constant(hp.kernels, 0.5);
  T4 x = fill.tensor(4, 1, hp.channels, hp.samples);
  const Mat r = fill.mat(4, hp.feature_dim);

  EncoderCache<double> cache;
  encode(p, hp, x, mode, &cache);
  auto g = encode_backward(p, hp, cache, r, true);

  auto checked = [&](std::string_view name) {
    if (name == "log_temperature") return false;
    return mode == Mode::Eval || (name != "temporal.b" && name != "spatial.b");
  };
  std::vector<CheckedTensor> tensors;
  std::vector<std::span<const double>> analytic;
  for_each_tensor(std::as_const(g.params),
                  [&](std::string_view name, std::span<const double> v, Index, Index, bool learn) {
                    if (learn && checked(name)) analytic.push_back(v);
                  });
  std::size_t k = 0;
  for_each_tensor(p, [&](std::string_view name, std::span<double> v, Index, Index, bool learn) {
    if (learn && checked(name)) tensors.push_back({std::string(name), v, analytic[k++]});
  });
  tensors.push_back({"input", as_span(x), as_span(g.d_input)});
  return check_gradients(
      "encoder/" + to_string(module) + (mode == Mode::Train ? "/train" : "/eval"),
      [&] { return project(encode(p, hp, x, mode), r); }, std::move(tensors), opt);
}

}  // namespace

std::vector<GradCheckReport> run_gradient_suite(std::uint64_t seed,
                                                const GradCheckOptions& options) {
  Filler fill(seed);
  std::vector<GradCheckReport> reports;
  reports.push_back(check_temporal_conv(fill, options));
  reports.push_back(check_avg_pool(fill, options));
  reports.push_back(check_spatial_conv(fill, options));
  reports.push_back(check_batch_norm(fill, Mode::Train, options));
  reports.push_back(check_batch_norm(fill, Mode::Eval, options));
  reports.push_back(check_elu(fill, options));
  reports.push_back(check_linear(fill, options));
  reports.push_back(check_softmax(fill, options));
  reports.push_back(check_self_attention(fill, options));
  reports.push_back(check_graph_attention(fill, true, options));
  reports.push_back(check_graph_attention(fill, false, options));
  reports.push_back(check_info_nce(fill, options));
  for (auto module :
       {SpatialModule::None, SpatialModule::SelfAttention, SpatialModule::GraphAttention}) {
    reports.push_back(check_encoder(fill, module, Mode::Train, seed + 1, options));
    reports.push_back(check_encoder(fill, module, Mode::Eval, seed + 2, options));
  }
  return reports;
}

}  // namespace nicekit
