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
#include <sstream>

#include <nlohmann/json.hpp>

#include "nice/contrastive.hpp"

using namespace nicekit;

namespace {

Matrix<double> random_unit_rows(Index n, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix<double> m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return normalize_rows(m);
}

// Independent loss: mean over both directions of -log softmax at the diagonal.
double reference_loss(const Matrix<double>& e, const Matrix<double>& im, double t) {
  const Matrix<double> s = e * im.transpose() * std::exp(t);
  const Index b = s.rows();
  double total = 0.0;
  for (Index i = 0; i < b; ++i) {
    double row = 0.0, col = 0.0;
    for (Index j = 0; j < b; ++j) {
      row += std::exp(s(i, j));
      col += std::exp(s(j, i));
    }
    total += (std::log(row) - s(i, i)) + (std::log(col) - s(i, i));
  }
  return total / (2.0 * double(b));
}

struct Oracle {
  PairedDataset train;
  PairedDataset val;
  HyperParams hp;
};

Oracle small_oracle(std::uint64_t data_seed = 2) {
  SynthSpec spec;
  spec.n_concepts = 40;
  spec.images_per_concept = 3;
  spec.repetitions = 1;
  spec.channels = 8;
  spec.samples = 60;
  spec.feature_dim = 16;
  spec.window_start = 10;
  spec.window_end = 50;
  spec.noise_std = 0.5;
  spec.data_seed = data_seed;
  auto ds = synth_generate(spec);
  auto eeg = std::make_shared<EEGEpochSet>(std::move(ds.eeg));
  auto bank = std::make_shared<FeatureBank>(std::move(ds.bank));
  const auto pairs = make_pairs(eeg, bank);
  auto [tr, va] = split_train_val(pairs, 20, 1);
  Oracle o{std::move(tr), std::move(va), {}};
  o.hp.kernels = 8;
  o.hp.temporal_kernel = 5;
  o.hp.pool_kernel = 9;
  o.hp.pool_stride = 3;
  o.hp.channels = spec.channels;
  o.hp.samples = spec.samples;
  o.hp.feature_dim = spec.feature_dim;
  return o;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.batch_size = 25;
  cfg.epochs = 4;
  cfg.lr = 1e-3;
  cfg.n_val = 20;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("InfoNCE closed forms") {
  const Matrix<double> eye = Matrix<double>::Identity(2, 2);
  const auto r = info_nce<double>(eye, eye, 0.0);
  CHECK(r.loss == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(0.3133).epsilon(1e-4 / 0.3133));

  const Matrix<double> one = random_unit_rows(1, 5, 1);
  const auto single = info_nce<double>(one, one, 2.0);
  CHECK(single.loss == 0.0);
  CHECK(single.d_logits.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(info_nce<double>(eye, Matrix<double>::Identity(3, 2), 0.0), DimensionError);
}

TEST_CASE("InfoNCE matches an independent reference and is symmetric") {
  const auto e = random_unit_rows(7, 6, 2);
  const auto im = random_unit_rows(7, 6, 3);
  for (double t : {-1.0, 0.0, 1.5, std::log(1.0 / 0.07)}) {
    const auto r = info_nce<double>(e, im, t);
    CHECK(r.loss == doctest::Approx(reference_loss(e, im, t)).epsilon(1e-12));
    // Swapping modalities leaves the symmetric loss unchanged.
    CHECK(info_nce<double>(im, e, t).loss == doctest::Approx(r.loss).epsilon(1e-12));
  }
  // A shared rotation of both embeddings preserves every similarity.
  Matrix<double> q = Eigen::HouseholderQR<Matrix<double>>(random_unit_rows(6, 6, 4)).householderQ();
  CHECK(info_nce<double>(e * q, im * q, 0.7).loss ==
        doctest::Approx(info_nce<double>(e, im, 0.7).loss).epsilon(1e-12));
  // Permuting the pairs together preserves the loss.
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(7);
  perm.setIdentity();
  std::swap(perm.indices()[0], perm.indices()[5]);
  CHECK(info_nce<double>(perm * e, perm * im, 0.7).loss ==
        doctest::Approx(info_nce<double>(e, im, 0.7).loss).epsilon(1e-12));
}

TEST_CASE("InfoNCE gradients agree with central differences") {
  const auto e = random_unit_rows(5, 4, 6);
  const auto im = random_unit_rows(5, 4, 7);
  const double t = 0.8;
  const auto r = info_nce<double>(e, im, t);
  const auto g = info_nce_backward<double>(r, im, t);
  const double h = 1e-6;
  double worst = 0.0;
  for (Index i = 0; i < e.size(); ++i) {
    Matrix<double> up = e, down = e;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd = (reference_loss(up, im, t) - reference_loss(down, im, t)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g.d_eeg.data()[i]));
  }
  CHECK(worst < 1e-8);
  const double fd_t = (reference_loss(e, im, t + h) - reference_loss(e, im, t - h)) / (2 * h);
  CHECK(g.d_log_temperature == doctest::Approx(fd_t).epsilon(1e-7));

  // Normalization backward against differences through the normalization.
  Matrix<double> f = random_unit_rows(3, 4, 8) * 2.5;
  f(1, 2) += 0.7;
  const Matrix<double> w = random_unit_rows(3, 4, 9);
  auto objective = [&](const Matrix<double>& x) { return (normalize_rows(x).array() * w.array()).sum(); };
  const Matrix<double> analytic = normalize_rows_backward<double>(f, normalize_rows(f), w);
  for (Index i = 0; i < f.size(); ++i) {
    Matrix<double> up = f, down = f;
    up.data()[i] += h;
    down.data()[i] -= h;
    CHECK(analytic.data()[i] == doctest::Approx((objective(up) - objective(down)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("row normalization") {
  Matrix<double> m(2, 2);
  m << 3, 4, 0, 2;
  const auto u = normalize_rows(m);
  CHECK(u(0, 0) == doctest::Approx(0.6));
  CHECK(u(0, 1) == doctest::Approx(0.8));
  CHECK(u(1, 1) == doctest::Approx(1.0));
  m.row(1).setZero();
  CHECK_THROWS_AS(normalize_rows(m), NormalizationError);
}

TEST_CASE("Adam: first step moves by lr against the gradient sign") {
  const auto o = small_oracle();
  auto params = init_params<float>(o.hp, 3);
  const auto before = params;
  auto grads = zeros_like(params);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  for_each_tensor(grads, [&](std::string_view, std::span<float> v, Index, Index, bool learn) {
    if (!learn) return;
    for (auto& x : v) x = g(rng);
  });
  TrainConfig cfg;
  cfg.lr = 1e-3;
  auto state = adam_init(params);
  adam_step(params, grads, state, cfg);
  CHECK(state.step == 1);

  std::vector<std::span<const float>> p_after, p_before, gs;
  std::vector<bool> learnable;
  for_each_tensor(std::as_const(params), [&](std::string_view, std::span<const float> v, Index, Index, bool learn) {
    p_after.push_back(v);
    learnable.push_back(learn);
  });
  for_each_tensor(before, [&](std::string_view, std::span<const float> v, Index, Index, bool) { p_before.push_back(v); });
  for_each_tensor(std::as_const(grads), [&](std::string_view, std::span<const float> v, Index, Index, bool) { gs.push_back(v); });
  double worst = 0.0;
  for (std::size_t k = 0; k < p_after.size(); ++k) {
    for (std::size_t i = 0; i < p_after[k].size(); ++i) {
      const double delta = double(p_after[k][i]) - double(p_before[k][i]);
      if (!learnable[k]) {
        CHECK(delta == 0.0);
        continue;
      }
      const double expect = gs[k][i] > 0 ? -cfg.lr : (gs[k][i] < 0 ? cfg.lr : 0.0);
      worst = std::max(worst, std::abs(delta - expect));
    }
  }
  CHECK(worst < 1e-6);

  SUBCASE("zero gradient leaves parameters unchanged") {
    auto p = before;
    auto s = adam_init(p);
    adam_step(p, zeros_like(p), s, cfg);
    CHECK(p.temporal_w == before.temporal_w);
    CHECK(p.proj_w == before.proj_w);
    CHECK(p.log_temperature == before.log_temperature);
  }
  SUBCASE("non-finite gradient is rejected") {
    auto bad = zeros_like(params);
    bad.proj_b[0] = std::numeric_limits<float>::quiet_NaN();
    auto s = adam_init(params);
    CHECK_THROWS_AS(adam_step(params, bad, s, cfg), NumericalError);
  }
}

TEST_CASE("training configuration validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.batch_size == 1000);
  CHECK(cfg.epochs == 200);
  CHECK(cfg.lr == 2e-4);
  CHECK(cfg.beta1 == 0.5);
  CHECK(cfg.beta2 == 0.999);
  auto bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = cfg;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("training is deterministic and keeps the best validation snapshot") {
  const auto o = small_oracle();
  const auto cfg = small_config();
  std::vector<EpochRecord> streamed;
  const auto a = train(o.train, o.val, o.hp, cfg, [&](const EpochRecord& r) { streamed.push_back(r); });
  const auto b = train(o.train, o.val, o.hp, cfg);
  REQUIRE(a.state.history.size() == 4);
  CHECK(streamed.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.state.history[i].train_loss == b.state.history[i].train_loss);
    CHECK(a.state.history[i].val_loss == b.state.history[i].val_loss);
  }
  CHECK(a.best.proj_w == b.best.proj_w);

  Index argmin = 0;
  for (std::size_t i = 1; i < a.state.history.size(); ++i) {
    if (a.state.history[i].val_loss < a.state.history[static_cast<std::size_t>(argmin)].val_loss) argmin = Index(i);
  }
  CHECK(a.state.best_epoch == argmin);
  CHECK(evaluate_loss(a.best, o.hp, o.val) ==
        doctest::Approx(a.state.history[static_cast<std::size_t>(argmin)].val_loss).epsilon(1e-6));

  std::ostringstream line;
  write_epoch_json(line, a.state.history[0]);
  const auto doc = nlohmann::json::parse(line.str());
  CHECK(doc.contains("exp_t"));
  CHECK(doc["epoch"] == 0);
}

TEST_CASE("temperature stays under the cap") {
  const auto o = small_oracle();
  auto cfg = small_config();
  cfg.lr = 0.5;
  cfg.max_temperature = 15.0;
  cfg.epochs = 2;
  try {
    const auto r = train(o.train, o.val, o.hp, cfg);
    for (const auto& rec : r.state.history) CHECK(rec.temperature <= 15.0 + 1e-4);
  } catch (const TrainingDiverged&) {
    // An aggressive step may diverge; the cap is then untestable here.
  }
}

TEST_CASE("divergence surfaces the last good snapshot") {
  const auto o = small_oracle();
  auto cfg = small_config();
  cfg.lr = 1e30;
  cfg.epochs = 3;
  const auto init = init_params<float>(o.hp, cfg.seed);
  bool diverged = false;
  try {
    train(o.train, o.val, o.hp, cfg);
  } catch (const TrainingDiverged& e) {
    diverged = true;
    CHECK(e.last_good().temporal_w.allFinite());
    CHECK(e.last_good().proj_w.allFinite());
    CHECK(e.last_good().temporal_w == init.temporal_w);
  }
  CHECK(diverged);
}

TEST_CASE("mismatched datasets are rejected") {
  const auto o = small_oracle();
  auto hp = o.hp;
  hp.feature_dim = 17;
  CHECK_THROWS_AS(train(o.train, o.val, hp, small_config()), DimensionError);
  hp = o.hp;
  hp.samples = 59;
  CHECK_THROWS_AS(train(o.train, o.val, hp, small_config()), DimensionError);
}

TEST_CASE("training on a small oracle halves the contrastive loss") {
  const auto o = small_oracle();
  auto cfg = small_config();
  cfg.epochs = 40;
  const double before = evaluate_loss(init_params<float>(o.hp, cfg.seed), o.hp, o.train);
  const auto r = train(o.train, o.val, o.hp, cfg);
  const double after = r.state.history.back().train_loss;
  MESSAGE("initial loss " << before << ", final train loss " << after);
  CHECK(after <= 0.5 * before);
}
