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

#include <cmath>
#include <random>

#include "nice/gradcheck.hpp"
#include "nice/layers.hpp"

using namespace nicekit;
using doctest::Approx;

namespace {

Tensor4<double> random_tensor(Index b, Index m, Index r, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor4<double> t(b, m, r, c);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

}  // namespace

TEST_CASE("tensor4 rejects empty dimensions") {
  CHECK_THROWS_AS(Tensor4<float>(0, 1, 2, 3), DimensionError);
  CHECK_THROWS_AS(Tensor4<float>(1, 1, 2, -1), DimensionError);
  Tensor4<float> t(2, 3, 4, 5);
  CHECK(t.size() == 120);
}

TEST_CASE("temporal conv with a delta kernel truncates") {
  auto x = random_tensor(2, 1, 3, 10, 1);
  Matrix<double> w = Matrix<double>::Zero(1, 4);
  w(0, 0) = 1.0;
  auto y = temporal_conv<double>(x, w, Vector<double>::Zero(1));
  REQUIRE(y.cols() == 7);
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 3; ++c)
      for (Index t = 0; t < 7; ++t) CHECK(y(n, 0, c, t) == x(n, 0, c, t));
}

TEST_CASE("temporal conv output length and kernel errors") {
  Tensor4<float> x(1, 1, 2, 250);
  x.flat().setOnes();
  auto y = temporal_conv<float>(x, Matrix<float>::Ones(40, 25), Vector<float>::Zero(40));
  CHECK(y.maps() == 40);
  CHECK(y.cols() == 226);
  CHECK_THROWS_AS(temporal_conv<float>(x, Matrix<float>::Ones(2, 251), Vector<float>::Zero(2)),
                  InvalidKernelError);
}

TEST_CASE("temporal conv is linear without bias") {
  auto x = random_tensor(2, 1, 3, 12, 2);
  auto z = random_tensor(2, 1, 3, 12, 3);
  Matrix<double> w = random_tensor(1, 1, 4, 5, 4).slab(0, 0);
  Vector<double> b = Vector<double>::Zero(4);
  Tensor4<double> mix(2, 1, 3, 12);
  mix.flat() = 2.5 * x.flat() - 0.5 * z.flat();
  auto lhs = temporal_conv(mix, w, b);
  Vector<double> rhs = 2.5 * temporal_conv(x, w, b).flat() - 0.5 * temporal_conv(z, w, b).flat();
  CHECK((lhs.flat() - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("avg pool") {
  SUBCASE("mean of a window") {
    Tensor4<double> x(1, 1, 1, 3);
    x.flat() << 1, 2, 3;
    auto y = avg_pool(x, 3, 1);
    REQUIRE(y.cols() == 1);
    CHECK(y(0, 0, 0, 0) == Approx(2.0));
  }
  SUBCASE("constant in, constant out") {
    Tensor4<double> x = Tensor4<double>::Constant(2, 3, 2, 30, 1.75);
    auto y = avg_pool(x, 7, 3);
    CHECK((y.flat().array() - 1.75).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("paper geometry") {
    CHECK(pooled_length(226, 51, 5) == 36);
    CHECK(40 * pooled_length(226, 51, 5) == 1440);
  }
  SUBCASE("kernel longer than signal") {
    Tensor4<double> x(1, 1, 1, 5);
    CHECK_THROWS_AS(avg_pool(x, 6, 1), InvalidKernelError);
  }
  SUBCASE("backward spreads 1/m2") {
    Tensor4<double> d = Tensor4<double>::Constant(1, 1, 1, 1, 1.0);
    auto g = avg_pool_backward(d, 3, 3, 1);
    for (Index t = 0; t < 3; ++t) CHECK(g(0, 0, 0, t) == Approx(1.0 / 3.0));
  }
}

TEST_CASE("spatial conv") {
  SUBCASE("single electrode identity") {
    auto x = random_tensor(2, 3, 1, 6, 5);
    auto y = spatial_conv<double>(x, Matrix<double>::Identity(3, 3), Vector<double>::Zero(3));
    CHECK((y.flat() - x.flat()).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("zero kernel gives the bias") {
    auto x = random_tensor(2, 3, 4, 6, 6);
    auto y = spatial_conv<double>(x, Matrix<double>::Zero(3, 12), Vector<double>::Constant(3, 0.25));
    CHECK((y.flat().array() - 0.25).abs().maxCoeff() == 0.0);
  }
  SUBCASE("shape") {
    Tensor4<float> x(2, 40, 63, 36);
    x.flat().setZero();
    auto y = spatial_conv<float>(x, Matrix<float>::Zero(40, 40 * 63), Vector<float>::Zero(40));
    CHECK(y.shape() == "(2, 40, 1, 36)");
  }
  SUBCASE("electrode mismatch") {
    Tensor4<double> x(1, 2, 3, 4);
    CHECK_THROWS_AS(spatial_conv<double>(x, Matrix<double>::Zero(2, 8), Vector<double>::Zero(2)),
                    DimensionError);
  }
}

TEST_CASE("batch norm") {
  auto x = random_tensor(8, 3, 4, 16, 7);
  auto bn = BatchNorm<double>::Identity(3);
  SUBCASE("train mode standardizes each map") {
    auto y = batch_norm(x, bn, Mode::Train);
    for (Index f = 0; f < 3; ++f) {
      double sum = 0, sq = 0;
      Index n = 0;
      for (Index b = 0; b < 8; ++b)
        for (Index c = 0; c < 4; ++c)
          for (Index t = 0; t < 16; ++t) {
            sum += y(b, f, c, t);
            ++n;
          }
      const double mean = sum / double(n);
      for (Index b = 0; b < 8; ++b)
        for (Index c = 0; c < 4; ++c)
          for (Index t = 0; t < 16; ++t) sq += (y(b, f, c, t) - mean) * (y(b, f, c, t) - mean);
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(sq / double(n) - 1.0) < 1e-3);
    }
  }
  SUBCASE("affine collapse") {
    bn.gamma.setZero();
    bn.beta.setConstant(5.0);
    auto y = batch_norm(x, bn, Mode::Train);
    CHECK((y.flat().array() - 5.0).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("degenerate batch") {
    auto one = random_tensor(1, 3, 2, 2, 8);
    CHECK_THROWS_AS(batch_norm(one, bn, Mode::Train), DegenerateBatchError);
    CHECK_NOTHROW(batch_norm(one, bn, Mode::Eval));
  }
  SUBCASE("eval mode uses running statistics") {
    bn.running_mean.setConstant(2.0);
    bn.running_var.setConstant(4.0);
    auto y = batch_norm(x, bn, Mode::Eval);
    const double expect = (x(0, 1, 2, 3) - 2.0) / std::sqrt(4.0 + kBatchNormEps);
    CHECK(y(0, 1, 2, 3) == Approx(expect).epsilon(1e-12));
  }
  SUBCASE("running statistics move by the momentum") {
    BatchNormCache<double> cache;
    batch_norm(x, bn, Mode::Train, &cache);
    update_running_stats(bn, cache, kBatchNormMomentum);
    const double unbiased = cache.batch_var[0] * double(cache.count) / double(cache.count - 1);
    CHECK(bn.running_mean[0] == Approx(0.1 * cache.batch_mean[0]));
    CHECK(bn.running_var[0] == Approx(0.9 + 0.1 * unbiased));
  }
}

TEST_CASE("elu") {
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(1.0) == 1.0);
  CHECK(elu(-1.0) == Approx(-0.6321).epsilon(1e-4));
  CHECK(elu(-1.0) == Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
}

TEST_CASE("linear") {
  Matrix<double> x = random_tensor(1, 1, 3, 4, 9).slab(0, 0);
  auto y = linear<double>(x, Matrix<double>::Identity(4, 4), Vector<double>::Zero(4));
  CHECK((y - x).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(linear<double>(x, Matrix<double>::Identity(5, 4), Vector<double>::Zero(4)),
                  DimensionError);
}

TEST_CASE("softmax rows") {
  Matrix<double> m(3, 2);
  m << 0, 0, 1, 0, 1000, 0;
  auto y = softmax_rows(m);
  CHECK(y(0, 0) == Approx(0.5));
  CHECK(y(1, 0) == Approx(0.7311).epsilon(1e-4));
  CHECK(y(1, 1) == Approx(0.2689).epsilon(1e-4));
  CHECK(y(2, 0) == 1.0);
  CHECK(std::isfinite(y(2, 1)));
  auto x = random_tensor(1, 1, 6, 9, 10).slab(0, 0);
  Matrix<double> xs = x;
  auto p = softmax_rows(xs);
  CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
  Matrix<double> shifted = xs;
  shifted.row(2).array() += 17.0;
  CHECK((softmax_rows(shifted) - p).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient checker flags wrong gradients") {
  Matrix<double> x = random_tensor(1, 1, 3, 3, 11).slab(0, 0);
  Matrix<double> wrong = 3.0 * x;  // d/dx of sum(x^2) is 2x
  auto report = check_gradients(
      "square", [&] { return x.squaredNorm(); }, {{"x", as_span(x), as_span(wrong)}});
  CHECK_FALSE(report.passed(1e-4));
  Matrix<double> right = 2.0 * x;
  auto ok = check_gradients(
      "square", [&] { return x.squaredNorm(); }, {{"x", as_span(x), as_span(right)}});
  CHECK(ok.passed(1e-4));
  CHECK(ok.min_points() == 9);
}

TEST_CASE("gradient checker reports non-finite gradients") {
  Matrix<double> x = Matrix<double>::Ones(2, 2);
  Matrix<double> g = Matrix<double>::Ones(2, 2);
  g(1, 0) = std::nan("");
  CHECK_THROWS_AS(check_gradients(
                      "nan", [&] { return x.sum(); }, {{"x", as_span(x), as_span(g)}}),
                  NumericalError);
}

TEST_CASE("gradient checker skips a kink") {
  Matrix<double> x(1, 4);
  x << 0.0, 0.5, -0.5, 2.0;
  Matrix<double> g(1, 4);
  g << 1.0, 1.0, -1.0, 1.0;  // |x|; the first entry sits on the kink
  GradCheckOptions opt;
  opt.step = 1e-3;
  auto report = check_gradients(
      "abs", [&] { return x.cwiseAbs().sum(); }, {{"x", as_span(x), as_span(g)}}, opt);
  CHECK(report.tensors[0].skipped == 1);
  CHECK(report.passed(1e-4));
}

TEST_CASE("elu zero is excluded from sampling") {
  Tensor4<double> x(1, 1, 1, 12);
  for (Index i = 0; i < 12; ++i) x.data()[i] = double(i - 6) * 0.5;
  Tensor4<double> ones = Tensor4<double>::Constant(1, 1, 1, 12, 1.0);
  auto d = elu_backward(elu(x), ones);
  GradCheckOptions opt;
  opt.exclude = [&](std::string_view, Index i) { return x.data()[i] == 0.0; };
  auto report = check_gradients(
      "elu", [&] { return elu(x).flat().sum(); }, {{"x", as_span(x), as_span(d)}}, opt);
  CHECK(report.tensors[0].skipped == 1);
  CHECK(report.passed(1e-4));
}

TEST_CASE("full gradient suite") {
  auto reports = run_gradient_suite();
  REQUIRE(reports.size() == 18);
  for (const auto& r : reports) {
    INFO(r.layer << " max rel err " << r.max_rel_error());
    CHECK(r.passed(1e-4));
    CHECK(r.total_points() >= 10);
    for (const auto& t : r.tensors) CHECK(t.points >= 1);
  }
}
