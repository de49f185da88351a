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

// Signal conditioning for epoched EEG.  Every transform returns a new set and
// leaves its input untouched.  Times in milliseconds are measured from
// stimulus onset.

#ifndef NICE_PREPROCESS_HPP
#define NICE_PREPROCESS_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nice/data_io.hpp"

namespace nicekit {

inline constexpr double kDefaultBaselineMs = 200.0;
inline constexpr double kDefaultShrinkage = 0.1;

// Subtracts, per trial and channel, the mean of the `pre_ms` before onset.
EEGEpochSet baseline_correct(const EEGEpochSet& x, double pre_ms = kDefaultBaselineMs);

// Same, with externally supplied baseline means of shape (trials, channels).
EEGEpochSet baseline_correct(const EEGEpochSet& x, const Matrix<double>& baseline_means);

// Keeps samples in [start_ms, end_ms) relative to onset; negative start keeps
// part of the pre-stimulus segment.
EEGEpochSet crop(const EEGEpochSet& x, double start_ms, double end_ms);

// FFT low-pass at target_hz / 2 followed by integer decimation.
EEGEpochSet downsample(const EEGEpochSet& x, double target_hz);

// Multivariate noise normalization.
struct WhitenOp {
  Matrix<double> matrix;  // (C, C), symmetric
  double shrinkage = kDefaultShrinkage;
  std::string source;
};

// Trial-averaged channel covariance over time samples (each trial demeaned).
Matrix<double> average_channel_covariance(const EEGEpochSet& x);

WhitenOp fit_whitener(const EEGEpochSet& x, double shrinkage = kDefaultShrinkage);
EEGEpochSet apply_whitener(const WhitenOp& op, const EEGEpochSet& x);

// One trial per stimulus: the mean of its first n_reps repetitions (all when
// unset), ordered by repetition_index.  Stimuli keep first-appearance order.
EEGEpochSet average_repetitions(const EEGEpochSet& x, std::optional<Index> n_reps = std::nullopt);

// Zeroes every sample outside [start_ms, end_ms).
EEGEpochSet mask_time_window(const EEGEpochSet& x, double start_ms, double end_ms);

// Sample range [first, last) of a window in milliseconds after onset.
std::pair<Index, Index> window_samples(const EEGEpochSet& x, double start_ms, double end_ms);

// ---------------------------------------------------------------------------
// Electrode regions of the 10-10 system, keyed by label prefix:
// frontal {Fp, AF, F}, central {FC, C, CP}, temporal {FT, T, TP},
// parietal {P}, occipital {PO, O}.  Labels outside that table must be
// assigned in a region map (label -> region).

using RegionMap = std::map<std::string, std::string>;

inline const std::vector<std::string> kRegions = {"frontal", "central", "temporal", "parietal",
                                                  "occipital"};

std::optional<std::string> region_of(std::string_view label, const RegionMap& overrides = {});
RegionMap load_region_map(const std::filesystem::path& path);

// Electrodes of `region`; MappingError lists labels with no region.
std::vector<Index> region_channels(const EEGEpochSet& x, std::string_view region,
                                   const RegionMap& overrides = {});

// MappingError lists names missing from the montage.
std::vector<Index> resolve_channels(const EEGEpochSet& x, const std::vector<std::string>& names);

EEGEpochSet ablate_channels(const EEGEpochSet& x, const std::vector<Index>& channels);
EEGEpochSet ablate_electrodes(const EEGEpochSet& x, std::string_view region,
                              const RegionMap& overrides = {});
EEGEpochSet ablate_electrodes(const EEGEpochSet& x, const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Zero-phase FFT band masks.  A band keeps lo <= |f| < hi (hi inclusive when
// it reaches Nyquist), so adjacent bands partition the spectrum.

struct BandSpec {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;

  static BandSpec named(std::string_view name);
};

// delta 0.5-4, theta 4-8, alpha 8-13, beta 13-30, gamma 30-100 Hz.
const std::vector<BandSpec>& standard_bands();

EEGEpochSet bandpass(const EEGEpochSet& x, const BandSpec& band);

}  // namespace nicekit

#endif  // NICE_PREPROCESS_HPP
