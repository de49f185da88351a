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
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "nice/preprocess.hpp"

using namespace nicekit;

namespace {

EEGEpochSet make_set(Index n, Index c, Index t, double rate, Index onset = 0) {
  EEGEpochSet s;
  s.channels = c;
  s.samples = t;
  s.sample_rate = rate;
  s.onset_sample = onset;
  s.epochs = RowMatrix<float>::Zero(n, c * t);
  const auto& montage = standard_montage_63();
  for (Index ch = 0; ch < c; ++ch) s.channel_names.push_back(montage[static_cast<std::size_t>(ch)]);
  for (Index i = 0; i < n; ++i) {
    s.stimulus_ids.push_back("img_" + std::to_string(i));
    s.concept_ids.push_back("concept_" + std::to_string(i));
    s.repetition_index.push_back(0);
  }
  return s;
}

// Fills every channel of every trial with amplitude * sin(2 pi f t / rate).
void fill_sine(EEGEpochSet& s, double freq, double amplitude = 1.0) {
  for (Index i = 0; i < s.trials(); ++i) {
    auto trial = s.trial(i);
    for (Index c = 0; c < s.channels; ++c) {
      for (Index t = 0; t < s.samples; ++t) {
        trial(c, t) += float(amplitude * std::sin(2.0 * std::numbers::pi * freq * double(t) / s.sample_rate));
      }
    }
  }
}

void fill_noise(EEGEpochSet& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  for (Index i = 0; i < s.epochs.size(); ++i) s.epochs.data()[i] = g(rng);
}

double rms(const RowMatrix<float>& a) {
  return std::sqrt(a.cast<double>().squaredNorm() / double(a.size()));
}

double rms_diff(const RowMatrix<float>& a, const RowMatrix<float>& b) {
  return std::sqrt((a.cast<double>() - b.cast<double>()).squaredNorm() / double(a.size()));
}

}  // namespace

TEST_CASE("baseline correction subtracts the pre-onset mean") {
  auto s = make_set(1, 1, 4, 1000.0, 2);
  s.epochs << 3, 3, 5, 5;
  const auto out = baseline_correct(s, 2.0);
  CHECK(out.epochs(0, 0) == 0.0f);
  CHECK(out.epochs(0, 1) == 0.0f);
  CHECK(out.epochs(0, 2) == 2.0f);
  CHECK(out.epochs(0, 3) == 2.0f);
  CHECK_THROWS_AS(baseline_correct(s, 5.0), ArgumentError);

  Matrix<double> means(1, 1);
  means << 3.0;
  CHECK(baseline_correct(s, means).epochs == out.epochs);
  CHECK_THROWS_AS(baseline_correct(s, Matrix<double>::Zero(2, 1)), ArgumentError);
}

TEST_CASE("downsampling 1000 Hz to 250 Hz") {
  auto s = make_set(2, 3, 1000, 1000.0, 100);
  SUBCASE("constant is preserved") {
    s.epochs.setConstant(7.5f);
    const auto out = downsample(s, 250.0);
    CHECK(out.samples == 250);
    CHECK(out.sample_rate == 250.0);
    CHECK(out.onset_sample == 25);
    CHECK((out.epochs.array() - 7.5f).abs().maxCoeff() < 1e-4f);
  }
  SUBCASE("in-band tone survives decimation") {
    fill_sine(s, 10.0);
    const auto out = downsample(s, 250.0);
    auto expect = make_set(2, 3, 250, 250.0);
    fill_sine(expect, 10.0);
    CHECK(rms_diff(out.epochs, expect.epochs) < 1e-5);
  }
  SUBCASE("200 Hz tone is suppressed below 1%") {
    fill_sine(s, 200.0);
    const auto out = downsample(s, 250.0);
    CHECK(rms(out.epochs) < 0.01 * rms(s.epochs));
  }
  CHECK_THROWS_AS(downsample(s, 300.0), ArgumentError);
  CHECK_THROWS_AS(downsample(s, 0.0), ArgumentError);
  CHECK(downsample(s, 1000.0).epochs == s.epochs);
}

TEST_CASE("crop keeps the window relative to onset") {
  auto s = make_set(1, 1, 10, 1000.0, 2);
  for (Index t = 0; t < 10; ++t) s.epochs(0, t) = float(t);
  const auto out = crop(s, 0.0, 5.0);
  CHECK(out.samples == 5);
  CHECK(out.onset_sample == 0);
  CHECK(out.epochs(0, 0) == 2.0f);
  CHECK(out.epochs(0, 4) == 6.0f);
  const auto pre = crop(s, -1.0, 3.0);
  CHECK(pre.onset_sample == 1);
  CHECK(pre.epochs(0, 0) == 1.0f);
  CHECK_THROWS_AS(crop(s, -3.0, 3.0), ArgumentError);
  CHECK_THROWS_AS(crop(s, 0.0, 9.0), ArgumentError);
}

TEST_CASE("whitening") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const Index c = 5;
  Matrix<double> mix(c, c);
  for (Index i = 0; i < mix.size(); ++i) mix.data()[i] = g(rng);
  mix.diagonal().array() += 3.0;
  auto s = make_set(60, c, 200, 250.0);
  for (Index i = 0; i < s.trials(); ++i) {
    Matrix<double> z(c, s.samples);
    for (Index k = 0; k < z.size(); ++k) z.data()[k] = g(rng);
    s.trial(i) = (mix * z).cast<float>();
  }

  SUBCASE("lambda 0 whitens the fitting data to identity") {
    const auto op = fit_whitener(s, 0.0);
    CHECK((op.matrix - op.matrix.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    const auto cov = average_channel_covariance(apply_whitener(op, s));
    CHECK((cov - Matrix<double>::Identity(c, c)).cwiseAbs().maxCoeff() < 5e-2);
  }
  SUBCASE("lambda 1 is diagonal scaling") {
    const auto sigma = average_channel_covariance(s);
    const auto op = fit_whitener(s, 1.0);
    Matrix<double> expect = sigma.diagonal().cwiseSqrt().cwiseInverse().asDiagonal();
    CHECK((op.matrix - expect).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("identity-covariance data gives a near-identity whitener") {
    auto iid = make_set(100, 4, 1000, 250.0);
    fill_noise(iid, 4);
    const auto op = fit_whitener(iid, 0.0);
    CHECK((op.matrix - Matrix<double>::Identity(4, 4)).norm() < 1e-2);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(fit_whitener(s, -0.1), ArgumentError);
    CHECK_THROWS_AS(fit_whitener(s, 1.1), ArgumentError);
    auto rank_deficient = s;
    for (Index i = 0; i < s.trials(); ++i) rank_deficient.trial(i).row(1) = rank_deficient.trial(i).row(0);
    CHECK_THROWS_AS(fit_whitener(rank_deficient, 0.0), NumericalError);
    CHECK_NOTHROW(fit_whitener(rank_deficient, 0.1));
    WhitenOp wrong;
    wrong.matrix = Matrix<double>::Identity(3, 3);
    CHECK_THROWS_AS(apply_whitener(wrong, s), DimensionError);
  }
}

TEST_CASE("repetition averaging") {
  auto s = make_set(4, 1, 2, 250.0);
  s.stimulus_ids = {"a", "b", "a", "b"};
  s.concept_ids = {"x", "y", "x", "y"};
  s.repetition_index = {1, 0, 0, 1};
  s.epochs << 1, 1, 10, 20, 3, 5, 30, 40;
  const auto all = average_repetitions(s);
  REQUIRE(all.trials() == 2);
  CHECK(all.stimulus_ids == std::vector<std::string>{"a", "b"});
  CHECK(all.concept_ids == std::vector<std::string>{"x", "y"});
  CHECK(all.epochs(0, 0) == 2.0f);
  CHECK(all.epochs(0, 1) == 3.0f);
  CHECK(all.epochs(1, 1) == 30.0f);
  const auto first = average_repetitions(s, 1);
  CHECK(first.epochs(0, 0) == 3.0f);  // repetition 0 of "a" is trial 2
  CHECK(first.epochs(1, 0) == 10.0f);
  CHECK_THROWS_AS(average_repetitions(s, 3), ArgumentError);
  CHECK_THROWS_AS(average_repetitions(s, 0), ArgumentError);
  CHECK_NOTHROW(all.validate());
}

TEST_CASE("time window masking") {
  auto s = make_set(2, 2, 250, 250.0);
  s.epochs.setOnes();
  const auto [first, last] = window_samples(s, 100.0, 600.0);
  CHECK(first == 25);
  CHECK(last == 150);
  const auto out = mask_time_window(s, 100.0, 600.0);
  for (Index t = 0; t < 250; ++t) {
    const float expect = (t >= 25 && t < 150) ? 1.0f : 0.0f;
    CHECK(out.trial(1)(1, t) == expect);
  }
  CHECK(mask_time_window(out, 100.0, 600.0).epochs == out.epochs);
  CHECK(mask_time_window(s, 0.0, 1000.0).epochs == s.epochs);
  CHECK_THROWS_AS(mask_time_window(s, 0.0, 0.0), ArgumentError);
  CHECK_THROWS_AS(mask_time_window(s, 500.0, 1001.0), ArgumentError);
}

TEST_CASE("electrode regions") {
  CHECK(region_of("Fp1") == "frontal");
  CHECK(region_of("AFz") == "frontal");
  CHECK(region_of("FC3") == "central");
  CHECK(region_of("Cz") == "central");
  CHECK(region_of("TP9") == "temporal");
  CHECK(region_of("FT7") == "temporal");
  CHECK(region_of("P7") == "parietal");
  CHECK(region_of("POz") == "occipital");
  CHECK(region_of("O2") == "occipital");
  CHECK_FALSE(region_of("EOG").has_value());
  CHECK(region_of("EOG", {{"EOG", "frontal"}}) == "frontal");

  auto s = make_set(1, 63, 4, 250.0);
  const auto occ = region_channels(s, "occipital");
  CHECK(!occ.empty());
  for (Index c : occ) {
    const auto& name = s.channel_names[static_cast<std::size_t>(c)];
    CHECK((name.rfind("O", 0) == 0 || name.rfind("PO", 0) == 0));
  }
  // The five regions partition the montage.
  std::size_t total = 0;
  for (const auto& r : kRegions) total += region_channels(s, r).size();
  CHECK(total == 63);
  CHECK_THROWS_AS(region_channels(s, "limbic"), MappingError);

  s.channel_names[0] = "EOG";
  CHECK_THROWS_AS(region_channels(s, "frontal"), MappingError);
  CHECK_NOTHROW(region_channels(s, "frontal", {{"EOG", "frontal"}}));

  const auto path = std::filesystem::temp_directory_path() / "nice_regions.json";
  {
    std::ofstream(path) << R"({"EOG": "nowhere"})";
  }
  CHECK_THROWS_AS(load_region_map(path), MappingError);
  {
    std::ofstream(path) << R"({"EOG": "occipital"})";
  }
  CHECK(load_region_map(path).at("EOG") == "occipital");
}

TEST_CASE("electrode ablation zeroes exactly the listed channels") {
  auto s = make_set(3, 63, 5, 250.0);
  s.epochs.setOnes();
  const auto out = ablate_electrodes(s, "occipital");
  const auto occ = region_channels(s, "occipital");
  for (Index i = 0; i < 3; ++i) {
    for (Index c = 0; c < 63; ++c) {
      const bool gone = std::find(occ.begin(), occ.end(), c) != occ.end();
      CHECK(out.trial(i).row(c).sum() == (gone ? 0.0f : 5.0f));
    }
  }
  CHECK(ablate_electrodes(s, std::vector<std::string>{"Oz"}).trial(0).row(resolve_channels(s, {"Oz"})[0]).sum() == 0.0f);
  CHECK_THROWS_AS(resolve_channels(s, {"Oz", "Q9"}), MappingError);
  CHECK_THROWS_AS(ablate_channels(s, {63}), ArgumentError);
}

TEST_CASE("band masks") {
  auto s = make_set(2, 2, 250, 250.0);
  fill_sine(s, 10.0);
  CHECK(rms_diff(bandpass(s, BandSpec::named("alpha")).epochs, s.epochs) < 1e-6);
  CHECK(rms(bandpass(s, BandSpec::named("beta")).epochs) < 1e-6);
  CHECK(rms(bandpass(s, BandSpec::named("theta")).epochs) < 1e-6);

  auto noise = make_set(3, 2, 250, 250.0);
  fill_noise(noise, 9);
  SUBCASE("adjacent bands partition the spectrum") {
    const std::vector<BandSpec> parts = {{"a", 0.0, 4.0}, {"b", 4.0, 13.0}, {"c", 13.0, 60.0},
                                         {"d", 60.0, 125.0}};
    RowMatrix<float> sum = RowMatrix<float>::Zero(noise.epochs.rows(), noise.epochs.cols());
    for (const auto& b : parts) sum += bandpass(noise, b).epochs;
    CHECK(rms_diff(sum, noise.epochs) < 1e-5);
  }
  SUBCASE("band masks are idempotent") {
    const auto once = bandpass(noise, BandSpec::named("beta"));
    CHECK(rms_diff(bandpass(once, BandSpec::named("beta")).epochs, once.epochs) < 1e-6);
  }
  CHECK(standard_bands().size() == 5);
  CHECK_THROWS_AS(BandSpec::named("kappa"), ArgumentError);
  CHECK_THROWS_AS(bandpass(noise, BandSpec{"bad", 10.0, 200.0}), ArgumentError);
  CHECK_THROWS_AS(bandpass(noise, BandSpec{"bad", 10.0, 10.0}), ArgumentError);
}
