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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "nice/encoder.hpp"

using namespace nicekit;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

Tensor4<double> random_tensor(Index b, Index m, Index r, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor4<double> t(b, m, r, c);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

HyperParams small_hp(SpatialModule module = SpatialModule::None) {
  HyperParams hp;
  hp.kernels = 5;
  hp.temporal_kernel = 6;
  hp.pool_kernel = 9;
  hp.pool_stride = 3;
  hp.channels = 7;
  hp.samples = 48;
  hp.feature_dim = 8;
  hp.spatial = module;
  return hp;
}

// Non-trivial batch-norm state so eval mode differs from identity.
template <typename S>
void perturb_bn(BatchNorm<S>& bn, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (Index i = 0; i < bn.gamma.size(); ++i) {
    bn.gamma[i] = S(u(rng));
    bn.beta[i] = S(u(rng) - 1.0);
    bn.running_mean[i] = S(u(rng) - 1.0);
    bn.running_var[i] = S(u(rng));
  }
}

Tensor4<double> permute_electrodes(const Tensor4<double>& x, const std::vector<Index>& perm) {
  Tensor4<double> out(x.batch(), x.maps(), x.rows(), x.cols());
  for (Index n = 0; n < x.batch(); ++n)
    for (Index f = 0; f < x.maps(); ++f)
      for (Index c = 0; c < x.rows(); ++c)
        out.slab(n, f).row(c) = x.slab(n, f).row(perm[static_cast<std::size_t>(c)]);
  return out;
}

double max_abs_diff(const Tensor4<double>& a, const Tensor4<double>& b) {
  return (a.flat() - b.flat()).cwiseAbs().maxCoeff();
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "nice_test_encoders";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("default geometry: lengths, flatten width and initial temperature") {
  HyperParams hp;
  hp.channels = 63;
  hp.samples = 250;
  hp.feature_dim = 768;
  CHECK(hp.conv_length() == 226);
  CHECK(hp.pooled_length() == 36);
  CHECK(hp.flatten_width() == 1440);
  CHECK(kInitialTemperature == Approx(14.2857).epsilon(1e-5));
  auto p = init_params<float>(hp, 1);
  CHECK(p.temperature() == Approx(14.2857).epsilon(1e-5));
  CHECK(p.temporal_w.rows() == 40);
  CHECK(p.temporal_w.cols() == 25);
  CHECK(p.spatial_w.rows() == 40);
  CHECK(p.spatial_w.cols() == 40 * 63);
  CHECK(p.proj_w.rows() == 1440);
  CHECK(p.proj_w.cols() == 768);
  CHECK(p.module_kind() == SpatialModule::None);
}

TEST_CASE("hyperparameter validation") {
  HyperParams hp = small_hp();
  CHECK_NOTHROW(hp.validate());
  hp.temporal_kernel = hp.samples + 1;
  CHECK_THROWS_AS(hp.validate(), InvalidKernelError);
  hp = small_hp();
  hp.pool_kernel = hp.conv_length() + 1;
  CHECK_THROWS_AS(hp.validate(), InvalidKernelError);
  hp = small_hp();
  hp.kernels = 0;
  CHECK_THROWS_AS(hp.validate(), ArgumentError);
  CHECK(parse_spatial_module("ga") == SpatialModule::GraphAttention);
  CHECK(to_string(SpatialModule::SelfAttention) == "sa");
  CHECK_THROWS_AS(parse_spatial_module("gat"), ArgumentError);
}

TEST_CASE("init shapes of the attention modules") {
  auto sa = init_params<float>(small_hp(SpatialModule::SelfAttention), 3);
  REQUIRE(sa.module_kind() == SpatialModule::SelfAttention);
  CHECK(std::get<SelfAttention<float>>(sa.module).wq.rows() == 48);
  auto ga = init_params<float>(small_hp(SpatialModule::GraphAttention), 3);
  REQUIRE(ga.module_kind() == SpatialModule::GraphAttention);
  CHECK(std::get<GraphAttention<float>>(ga.module).a.size() == 96);
  CHECK(learnable_count(ga) == learnable_count(init_params<float>(small_hp(), 3)) + 48 * 48 + 96);
}

TEST_CASE("fused temporal block equals the composed layers") {
  const auto x = random_tensor(4, 1, 5, 30, 11);
  Matrix<double> w = random_tensor(1, 1, 3, 4, 12).slab(0, 0);
  Vector<double> b = random_tensor(1, 1, 3, 1, 13).flat();
  auto bn = BatchNorm<double>::Identity(3);
  perturb_bn(bn, 14);
  const Index pk = 5, ps = 2;
  const auto d_out_shape = avg_pool(temporal_conv(x, w, b), pk, ps);
  const auto d_out = random_tensor(d_out_shape.batch(), d_out_shape.maps(), d_out_shape.rows(),
                                   d_out_shape.cols(), 15);

  for (Mode mode : {Mode::Train, Mode::Eval}) {
    CAPTURE(int(mode));
    TemporalBlockCache<double> cache;
    const auto fused = temporal_block(x, w, b, bn, pk, ps, mode, &cache);

    BatchNormCache<double> bn_cache;
    const auto conv = temporal_conv(x, w, b);
    const auto normed = batch_norm(conv, bn, mode, &bn_cache);
    const auto act = elu(normed);
    const auto ref = avg_pool(act, pk, ps);
    CHECK(max_abs_diff(fused, ref) < 1e-10);
    CHECK((cache.bn.batch_mean - bn_cache.batch_mean).cwiseAbs().maxCoeff() < 1e-10);

    const auto g = temporal_block_backward(x, w, b, bn, pk, ps, cache, d_out, true);
    const auto d_act = avg_pool_backward(d_out, act.cols(), pk, ps);
    const auto d_bn = batch_norm_backward(elu_backward(act, d_act), bn, bn_cache);
    const auto d_conv = temporal_conv_backward(x, w, d_bn.d_input);
    CHECK((g.d_gamma - d_bn.d_params[0]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((g.d_beta - d_bn.d_params[1]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((g.d_w - d_conv.d_params[0]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((g.d_b - d_conv.d_params[1]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(max_abs_diff(g.d_input, d_conv.d_input) < 1e-9);
  }
}

TEST_CASE("spatial module none is an exact identity on the pipeline") {
  const HyperParams hp = small_hp();
  auto p = init_params<double>(hp, 5);
  perturb_bn(p.bn1, 6);
  perturb_bn(p.bn2, 7);
  const auto x = random_tensor(3, 1, hp.channels, hp.samples, 8);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    const Matrix<double> pipeline = encode(p, hp, x, mode);
    // The plain encoder: the same stages applied to the raw input.
    auto pooled = temporal_block(x, p.temporal_w, p.temporal_b, p.bn1, hp.pool_kernel,
                                 hp.pool_stride, mode);
    auto a2 = batch_norm(spatial_conv(pooled, p.spatial_w, p.spatial_b), p.bn2, mode);
    a2.flat().array() = elu(a2.flat().array());
    const Matrix<double> plain = linear(flatten(a2), p.proj_w, p.proj_b);
    CHECK(pipeline.cwiseEqual(plain).all());
  }
  const auto pf = p.cast<float>();
  const auto xf = x.cast<float>();
  CHECK(encode(pf, hp, xf, Mode::Eval).cwiseEqual(encode(pf, hp, xf, Mode::Eval)).all());
}

TEST_CASE("self and graph attention are electrode-permutation equivariant") {
  const Index c = 9, t = 16;
  std::vector<Index> perm(static_cast<std::size_t>(c));
  std::iota(perm.begin(), perm.end(), Index(0));
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto x = random_tensor(2, 1, c, t, 100 + trial);
    const auto px = permute_electrodes(x, perm);
    SelfAttention<double> sa{random_tensor(1, 1, t, t, 200 + trial).slab(0, 0) * 0.3,
                             random_tensor(1, 1, t, t, 300 + trial).slab(0, 0) * 0.3,
                             random_tensor(1, 1, t, t, 400 + trial).slab(0, 0) * 0.3};
    GraphAttention<double> ga{random_tensor(1, 1, t, t, 500 + trial).slab(0, 0) * 0.3,
                              random_tensor(1, 1, 2 * t, 1, 600 + trial).flat()};
    CHECK(max_abs_diff(sa_forward(px, sa), permute_electrodes(sa_forward(x, sa), perm)) < 1e-12);
    for (bool residual : {true, false}) {
      CHECK(max_abs_diff(ga_forward(px, ga, residual),
                         permute_electrodes(ga_forward(x, ga, residual), perm)) < 1e-12);
    }
  }
}

TEST_CASE("attention rows are distributions") {
  const auto x = random_tensor(1, 1, 6, 10, 31);
  SelfAttention<double> sa{random_tensor(1, 1, 10, 10, 32).slab(0, 0),
                           random_tensor(1, 1, 10, 10, 33).slab(0, 0),
                           random_tensor(1, 1, 10, 10, 34).slab(0, 0)};
  GraphAttention<double> ga{random_tensor(1, 1, 10, 10, 35).slab(0, 0),
                            random_tensor(1, 1, 20, 1, 36).flat()};
  const Matrix<double> trial = x.sample(0);
  for (const Matrix<double>& a : {sa_attention(trial, sa), ga_coefficients(trial, ga)}) {
    CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(a.minCoeff() >= 0.0);
  }
  // Zero weights: GA aggregates nothing and the residual passes the input.
  GraphAttention<double> zero{Matrix<double>::Zero(10, 10), Vector<double>::Zero(20)};
  CHECK(ga_forward(trial, zero, true).isApprox(trial));
  CHECK(ga_forward(trial, zero, false).isZero());
  CHECK_THROWS_AS(sa_forward(Matrix<double>(trial.leftCols(9)), sa), DimensionError);
}

TEST_CASE("encoder input shape errors") {
  const HyperParams hp = small_hp();
  const auto p = init_params<float>(hp, 1);
  CHECK_THROWS_AS(encode(p, hp, Tensor4<float>(2, 1, hp.channels + 1, hp.samples), Mode::Eval),
                  DimensionError);
  CHECK_THROWS_AS(encode(p, hp, Tensor4<float>(1, 1, hp.channels, hp.samples), Mode::Train),
                  DegenerateBatchError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  for (auto module : {SpatialModule::None, SpatialModule::SelfAttention,
                      SpatialModule::GraphAttention}) {
    HyperParams hp = small_hp(module);
    hp.ga_residual = false;
    auto p = init_params<float>(hp, 42);
    perturb_bn(p.bn1, 1);
    p.log_temperature = 2.5f;
    const auto path = temp_file("model_" + to_string(module) + ".ckpt");
    save_checkpoint(path, p, hp);
    const auto ck = load_checkpoint(path);
    CHECK(ck.hyper == hp);
    std::vector<float> a, b;
    for_each_tensor(p, [&](std::string_view, std::span<const float> v, Index, Index, bool) {
      a.insert(a.end(), v.begin(), v.end());
    });
    for_each_tensor(ck.params, [&](std::string_view, std::span<const float> v, Index, Index, bool) {
      b.insert(b.end(), v.begin(), v.end());
    });
    CHECK(a == b);
    CHECK(ck.params.log_temperature == 2.5f);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const HyperParams hp = small_hp();
  const auto p = init_params<float>(hp, 42);
  const auto path = temp_file("good.ckpt");
  save_checkpoint(path, p, hp);
  const auto size = fs::file_size(path);

  SUBCASE("truncated") {
    const auto cut = temp_file("cut.ckpt");
    fs::copy_file(path, cut, fs::copy_options::overwrite_existing);
    fs::resize_file(cut, size - 17);
    CHECK_THROWS_AS(load_checkpoint(cut), Error);
  }
  SUBCASE("bad magic") {
    const auto bad = temp_file("magic.ckpt");
    fs::copy_file(path, bad, fs::copy_options::overwrite_existing);
    std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(temp_file("absent.ckpt")), Error);
  }
  SUBCASE("inconsistent parameters refuse to save") {
    auto q = p;
    q.proj_w.resize(3, 3);
    CHECK_THROWS_AS(save_checkpoint(temp_file("bad.ckpt"), q, hp), Error);
  }
}
