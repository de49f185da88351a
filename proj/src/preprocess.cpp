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

#include "nice/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <fstream>
#include <unordered_map>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>
#include <unsupported/Eigen/FFT>

namespace nicekit {

namespace {

Index ms_to_samples(double ms, double rate) { return static_cast<Index>(std::lround(ms * rate / 1000.0)); }

// Applies a real-valued mask over |f| to every channel of every trial.
template <typename Keep>
EEGEpochSet spectral_mask(const EEGEpochSet& x, Keep&& keep) {
  EEGEpochSet out = x;
  const Index n = x.samples;
  Eigen::FFT<double> fft;
  std::vector<double> row(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> spectrum;
  std::vector<double> back;
  std::vector<bool> mask(static_cast<std::size_t>(n));
  for (Index b = 0; b < n; ++b) {
    const Index k = b <= n / 2 ? b : n - b;  // |frequency| bin
    mask[static_cast<std::size_t>(b)] = keep(double(k) * x.sample_rate / double(n));
  }
  for (Index i = 0; i < x.trials(); ++i) {
    auto trial = out.trial(i);
    for (Index c = 0; c < x.channels; ++c) {
      for (Index t = 0; t < n; ++t) row[static_cast<std::size_t>(t)] = trial(c, t);
      fft.fwd(spectrum, row);
      for (Index b = 0; b < n; ++b) {
        if (!mask[static_cast<std::size_t>(b)]) spectrum[static_cast<std::size_t>(b)] = 0.0;
      }
      fft.inv(back, spectrum);
      for (Index t = 0; t < n; ++t) trial(c, t) = float(back[static_cast<std::size_t>(t)]);
    }
  }
  return out;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

EEGEpochSet baseline_correct(const EEGEpochSet& x, double pre_ms) {
  const Index pre = ms_to_samples(pre_ms, x.sample_rate);
  if (pre < 1 || pre > x.onset_sample) {
    throw ArgumentError("baseline of " + std::to_string(pre_ms) + " ms needs " +
                        std::to_string(pre) + " pre-stimulus samples, epoch has " +
                        std::to_string(x.onset_sample) + "; supply baseline means instead");
  }
  Matrix<double> means(x.trials(), x.channels);
  for (Index i = 0; i < x.trials(); ++i) {
    means.row(i) = x.trial(i)
                       .middleCols(x.onset_sample - pre, pre)
                       .cast<double>()
                       .rowwise()
                       .mean()
                       .transpose();
  }
  return baseline_correct(x, means);
}

EEGEpochSet baseline_correct(const EEGEpochSet& x, const Matrix<double>& baseline_means) {
  if (baseline_means.rows() != x.trials() || baseline_means.cols() != x.channels) {
    throw ArgumentError("baseline means must be (trials, channels)");
  }
  EEGEpochSet out = x;
  for (Index i = 0; i < x.trials(); ++i) {
    auto trial = out.trial(i);
    for (Index c = 0; c < x.channels; ++c) {
      trial.row(c).array() =
          (trial.row(c).cast<double>().array() - baseline_means(i, c)).cast<float>();
    }
  }
  return out;
}

EEGEpochSet crop(const EEGEpochSet& x, double start_ms, double end_ms) {
  const Index first = x.onset_sample + ms_to_samples(start_ms, x.sample_rate);
  const Index last = x.onset_sample + ms_to_samples(end_ms, x.sample_rate);
  if (first < 0 || last > x.samples || first >= last) {
    throw ArgumentError("crop window [" + std::to_string(start_ms) + ", " +
                        std::to_string(end_ms) + ") ms lies outside the epoch");
  }
  EEGEpochSet out = x;
  out.samples = last - first;
  out.onset_sample = std::max<Index>(0, x.onset_sample - first);
  out.epochs.resize(x.trials(), x.channels * out.samples);
  for (Index i = 0; i < x.trials(); ++i) {
    out.trial(i) = x.trial(i).middleCols(first, out.samples);
  }
  return out;
}

EEGEpochSet downsample(const EEGEpochSet& x, double target_hz) {
  if (!(target_hz > 0.0)) throw ArgumentError("target rate must be positive");
  const double ratio_f = x.sample_rate / target_hz;
  const auto ratio = static_cast<Index>(std::lround(ratio_f));
  if (ratio < 1 || std::abs(ratio_f - double(ratio)) > 1e-9) {
    throw ArgumentError("sample rate " + std::to_string(x.sample_rate) +
                        " Hz is not an integer multiple of " + std::to_string(target_hz) + " Hz");
  }
  if (ratio == 1) return x;
  const double cutoff = target_hz / 2.0;
  EEGEpochSet filtered = spectral_mask(x, [&](double f) { return f < cutoff; });
  EEGEpochSet out = filtered;
  out.samples = (x.samples + ratio - 1) / ratio;
  out.sample_rate = target_hz;
  out.onset_sample = x.onset_sample / ratio;
  out.epochs.resize(x.trials(), x.channels * out.samples);
  for (Index i = 0; i < x.trials(); ++i) {
    auto src = filtered.trial(i);
    auto dst = out.trial(i);
    for (Index t = 0; t < out.samples; ++t) dst.col(t) = src.col(t * ratio);
  }
  return out;
}

// ---------------------------------------------------------------------------

Matrix<double> average_channel_covariance(const EEGEpochSet& x) {
  Matrix<double> sigma = Matrix<double>::Zero(x.channels, x.channels);
  for (Index i = 0; i < x.trials(); ++i) {
    Matrix<double> centered = x.trial(i).cast<double>();
    centered.colwise() -= centered.rowwise().mean();
    sigma.noalias() += centered * centered.transpose() / double(x.samples);
  }
  return sigma / double(x.trials());
}

WhitenOp fit_whitener(const EEGEpochSet& x, double shrinkage) {
  if (shrinkage < 0.0 || shrinkage > 1.0) throw ArgumentError("shrinkage must lie in [0, 1]");
  if (x.channels < 2) throw ArgumentError("whitening needs at least 2 channels");
  if (x.trials() * x.samples <= x.channels) {
    throw ArgumentError("whitening needs more samples (trials * T) than channels");
  }
  const Matrix<double> sigma = average_channel_covariance(x);
  Matrix<double> shrunk = (1.0 - shrinkage) * sigma;
  shrunk.diagonal() += shrinkage * sigma.diagonal();

  Eigen::SelfAdjointEigenSolver<Matrix<double>> eig(shrunk);
  if (eig.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");
  const Vector<double>& values = eig.eigenvalues();
  const double top = values.maxCoeff();
  if (!(values.minCoeff() > 1e-12 * std::max(top, 1e-300))) {
    throw NumericalError("shrunk channel covariance is singular (smallest eigenvalue " +
                         std::to_string(values.minCoeff()) + "); raise the shrinkage");
  }
  WhitenOp op;
  op.matrix = eig.eigenvectors() * values.cwiseSqrt().cwiseInverse().asDiagonal() *
              eig.eigenvectors().transpose();
  op.matrix = 0.5 * (op.matrix + op.matrix.transpose()).eval();
  op.shrinkage = shrinkage;
  op.source = "fit on " + std::to_string(x.trials()) + " trials x " + std::to_string(x.samples) +
              " samples";
  return op;
}

EEGEpochSet apply_whitener(const WhitenOp& op, const EEGEpochSet& x) {
  if (op.matrix.rows() != x.channels) {
    throw DimensionError("whitener is " + std::to_string(op.matrix.rows()) + " x " +
                         std::to_string(op.matrix.cols()) + ", data has " +
                         std::to_string(x.channels) + " channels");
  }
  EEGEpochSet out = x;
  for (Index i = 0; i < x.trials(); ++i) {
    out.trial(i) = (op.matrix * x.trial(i).cast<double>()).cast<float>();
  }
  return out;
}

// ---------------------------------------------------------------------------

EEGEpochSet average_repetitions(const EEGEpochSet& x, std::optional<Index> n_reps) {
  if (n_reps && *n_reps < 1) throw ArgumentError("n_reps must be >= 1");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Index>> groups;
  for (Index i = 0; i < x.trials(); ++i) {
    const auto& id = x.stimulus_ids[static_cast<std::size_t>(i)];
    auto [it, inserted] = groups.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(i);
  }
  EEGEpochSet out = x;
  out.epochs.resize(static_cast<Index>(order.size()), x.epochs.cols());
  out.stimulus_ids.clear();
  out.concept_ids.clear();
  out.repetition_index.clear();
  for (std::size_t g = 0; g < order.size(); ++g) {
    auto& members = groups[order[g]];
    std::stable_sort(members.begin(), members.end(), [&](Index a, Index b) {
      return x.repetition_index[static_cast<std::size_t>(a)] <
             x.repetition_index[static_cast<std::size_t>(b)];
    });
    const Index available = static_cast<Index>(members.size());
    const Index take = n_reps.value_or(available);
    if (take > available) {
      throw ArgumentError("stimulus \"" + order[g] + "\" has " + std::to_string(available) +
                          " repetitions, " + std::to_string(take) + " requested");
    }
    Vector<double> sum = Vector<double>::Zero(x.epochs.cols());
    for (Index r = 0; r < take; ++r) sum += x.epochs.row(members[r]).transpose().cast<double>();
    out.epochs.row(static_cast<Index>(g)) = (sum / double(take)).cast<float>().transpose();
    out.stimulus_ids.push_back(order[g]);
    out.concept_ids.push_back(x.concept_ids[static_cast<std::size_t>(members.front())]);
    out.repetition_index.push_back(0);
  }
  return out;
}

std::pair<Index, Index> window_samples(const EEGEpochSet& x, double start_ms, double end_ms) {
  if (!(start_ms >= 0.0 && start_ms < end_ms && end_ms <= x.duration_ms() + 1e-9)) {
    throw ArgumentError("time window [" + std::to_string(start_ms) + ", " +
                        std::to_string(end_ms) + ") ms must satisfy 0 <= start < end <= " +
                        std::to_string(x.duration_ms()));
  }
  return {x.onset_sample + ms_to_samples(start_ms, x.sample_rate),
          x.onset_sample + ms_to_samples(end_ms, x.sample_rate)};
}

EEGEpochSet mask_time_window(const EEGEpochSet& x, double start_ms, double end_ms) {
  const auto [first, last] = window_samples(x, start_ms, end_ms);
  EEGEpochSet out = x;
  for (Index i = 0; i < x.trials(); ++i) {
    auto trial = out.trial(i);
    trial.leftCols(first).setZero();
    trial.rightCols(x.samples - last).setZero();
  }
  return out;
}

// ---------------------------------------------------------------------------

std::optional<std::string> region_of(std::string_view label, const RegionMap& overrides) {
  if (auto it = overrides.find(std::string(label)); it != overrides.end()) return it->second;
  std::string prefix;
  for (char ch : label) {
    if (!std::isalpha(static_cast<unsigned char>(ch))) break;
    prefix.push_back(ch);
  }
  prefix = upper(prefix);
  if (prefix.size() > 1 && prefix.back() == 'Z') prefix.pop_back();  // midline, e.g. POz
  static const std::unordered_map<std::string, std::string> table = {
      {"FP", "frontal"},  {"AF", "frontal"},  {"F", "frontal"},
      {"FC", "central"},  {"C", "central"},   {"CP", "central"},
      {"FT", "temporal"}, {"T", "temporal"},  {"TP", "temporal"},
      {"P", "parietal"},  {"PO", "occipital"}, {"O", "occipital"}};
  if (auto it = table.find(prefix); it != table.end()) return it->second;
  return std::nullopt;
}

RegionMap load_region_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open region map " + path.string());
  try {
    const auto doc = nlohmann::json::parse(in);
    RegionMap map = doc.get<RegionMap>();
    for (const auto& [label, region] : map) {
      if (std::find(kRegions.begin(), kRegions.end(), region) == kRegions.end()) {
        throw MappingError("region map assigns \"" + label + "\" to unknown region \"" + region +
                           "\"");
      }
    }
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("region map " + path.string() + " is not a label -> region object: " +
                        e.what());
  }
}

std::vector<Index> region_channels(const EEGEpochSet& x, std::string_view region,
                                   const RegionMap& overrides) {
  if (std::find(kRegions.begin(), kRegions.end(), region) == kRegions.end()) {
    throw MappingError("unknown region \"" + std::string(region) + "\"");
  }
  std::vector<Index> channels;
  std::vector<std::string> unmapped;
  for (Index c = 0; c < x.channels; ++c) {
    const auto& label = x.channel_names[static_cast<std::size_t>(c)];
    auto r = region_of(label, overrides);
    if (!r) {
      unmapped.push_back(label);
    } else if (*r == region) {
      channels.push_back(c);
    }
  }
  if (!unmapped.empty()) {
    std::string list;
    for (const auto& u : unmapped) list += (list.empty() ? "" : ", ") + u;
    throw MappingError("no region for electrode labels: " + list +
                       " (assign them in a region map)");
  }
  return channels;
}

std::vector<Index> resolve_channels(const EEGEpochSet& x, const std::vector<std::string>& names) {
  std::vector<Index> channels;
  std::vector<std::string> missing;
  for (const auto& name : names) {
    auto it = std::find(x.channel_names.begin(), x.channel_names.end(), name);
    if (it == x.channel_names.end()) {
      missing.push_back(name);
    } else {
      channels.push_back(static_cast<Index>(it - x.channel_names.begin()));
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw MappingError("electrodes not in montage: " + list);
  }
  return channels;
}

EEGEpochSet ablate_channels(const EEGEpochSet& x, const std::vector<Index>& channels) {
  EEGEpochSet out = x;
  for (Index c : channels) {
    if (c < 0 || c >= x.channels) throw ArgumentError("channel index out of range");
  }
  for (Index i = 0; i < x.trials(); ++i) {
    auto trial = out.trial(i);
    for (Index c : channels) trial.row(c).setZero();
  }
  return out;
}

EEGEpochSet ablate_electrodes(const EEGEpochSet& x, std::string_view region,
                              const RegionMap& overrides) {
  return ablate_channels(x, region_channels(x, region, overrides));
}

EEGEpochSet ablate_electrodes(const EEGEpochSet& x, const std::vector<std::string>& names) {
  return ablate_channels(x, resolve_channels(x, names));
}

// ---------------------------------------------------------------------------

const std::vector<BandSpec>& standard_bands() {
  static const std::vector<BandSpec> bands = {{"delta", 0.5, 4.0},
                                              {"theta", 4.0, 8.0},
                                              {"alpha", 8.0, 13.0},
                                              {"beta", 13.0, 30.0},
                                              {"gamma", 30.0, 100.0}};
  return bands;
}

BandSpec BandSpec::named(std::string_view name) {
  for (const auto& b : standard_bands()) {
    if (b.name == name) return b;
  }
  throw ArgumentError("unknown band \"" + std::string(name) + "\"");
}

EEGEpochSet bandpass(const EEGEpochSet& x, const BandSpec& band) {
  const double nyquist = x.sample_rate / 2.0;
  if (!(band.lo >= 0.0 && band.lo < band.hi && band.hi <= nyquist + 1e-9)) {
    throw ArgumentError("band " + band.name + " [" + std::to_string(band.lo) + ", " +
                        std::to_string(band.hi) + "] Hz must lie within [0, " +
                        std::to_string(nyquist) + "]");
  }
  const bool to_nyquist = band.hi >= nyquist - 1e-9;
  return spectral_mask(x, [&](double f) {
    return f >= band.lo && (f < band.hi || (to_nyquist && f <= band.hi + 1e-9));
  });
}

}  // namespace nicekit
