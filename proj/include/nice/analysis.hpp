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

// Ablation sweeps, representational similarity, time-frequency maps and
// Grad-CAM over trained encoders.

#ifndef NICE_ANALYSIS_HPP
#define NICE_ANALYSIS_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "nice/contrastive.hpp"
#include "nice/preprocess.hpp"
#include "nice/zeroshot.hpp"

namespace nicekit {

struct SweepResult {
  std::string axis;                  // e.g. "time_forward_ms", "region"
  std::vector<std::string> labels;   // one per point
  std::vector<double> values;        // numeric axis value, NaN when categorical
  std::vector<double> top1;
  std::vector<double> top5;
  std::map<std::string, std::string> meta;

  std::size_t size() const { return labels.size(); }
  // Throws IntegrityError on unequal lengths or fractions outside [0, 1].
  void validate() const;
};

void write_sweep_csv(std::ostream& out, const SweepResult& result);

// Worker count: hardware concurrency, capped by NICE_THREADS when set.
unsigned worker_count();

// Runs fn(0..n-1) on up to worker_count() threads.  Exceptions are rethrown
// after all jobs finish (the lowest index wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Everything an evaluation-only sweep needs.
struct EvalSetup {
  Checkpoint model;
  TemplateBank templates;
  TestAveraging averaging = TestAveraging::Signal;
  std::filesystem::path record_dir;  // per-point records for resuming; empty disables
};

struct AccuracyPoint {
  double top1 = 0.0;
  double top5 = 0.0;
};

AccuracyPoint evaluate_point(const EvalSetup& setup, const EEGEpochSet& test);

enum class TimeSweep { Forward, Backward, Segment };

std::string to_string(TimeSweep mode);
TimeSweep parse_time_sweep(std::string_view name);

struct TimeGrid {
  double step_ms = 100.0;
  double width_ms = 100.0;  // segment mode only
};

struct TimeWindow {
  double start_ms = 0.0;
  double end_ms = 0.0;
  double value = 0.0;  // axis coordinate of the point

  std::string label() const;
};

// Windows of a sweep over [0, duration_ms).
std::vector<TimeWindow> time_windows(double duration_ms, TimeSweep mode, const TimeGrid& grid);

// Point 0 is the unmasked baseline.  Forward keeps [0, x), backward keeps
// [x, end), segment keeps [x, x + width).
SweepResult sweep_time(const EvalSetup& setup, const EEGEpochSet& test, TimeSweep mode,
                       const TimeGrid& grid = {});

// Baseline, one point per region present in the montage, then "all".
SweepResult sweep_regions(const EvalSetup& setup, const EEGEpochSet& test,
                          const RegionMap& overrides = {},
                          const std::vector<std::string>& regions = kRegions);

// Sweep over test repetitions averaged before encoding.
SweepResult sweep_test_repetitions(const EvalSetup& setup, const EEGEpochSet& test,
                                   const std::vector<Index>& reps);

// 5..80 in steps of 5.
std::vector<Index> default_repetition_grid();

// ---------------------------------------------------------------------------
// Retraining sweeps.

using ModelFactory = std::function<Checkpoint(const EEGEpochSet& train)>;

// Pairs `train` with `bank`, holds out cfg.n_val trials and trains.
ModelFactory make_trainer(std::shared_ptr<const FeatureBank> bank, HyperParams hp,
                          TrainConfig cfg);

// Band-limits train and test and retrains per band.
SweepResult sweep_bands(const ModelFactory& factory, const EEGEpochSet& train,
                        const EEGEpochSet& test, const TemplateBank& tb,
                        const std::vector<BandSpec>& bands = standard_bands(),
                        TestAveraging averaging = TestAveraging::Signal,
                        const std::filesystem::path& record_dir = {});

// Masks train and test to each window and retrains per point (no baseline).
SweepResult sweep_time_retrained(const ModelFactory& factory, const EEGEpochSet& train,
                                 const EEGEpochSet& test, const TemplateBank& tb, TimeSweep mode,
                                 const TimeGrid& grid = {},
                                 TestAveraging averaging = TestAveraging::Signal,
                                 const std::filesystem::path& record_dir = {});

enum class SizeAxis { Conditions, Repetitions };

std::string to_string(SizeAxis axis);
SizeAxis parse_size_axis(std::string_view name);

// Seeded subset keeping ceil(fraction * n) stimuli or repetition indices.
EEGEpochSet subsample(const EEGEpochSet& x, double fraction, SizeAxis axis, std::uint64_t seed);

SweepResult sweep_training_size(const ModelFactory& factory, const EEGEpochSet& train,
                                const EEGEpochSet& test, const TemplateBank& tb,
                                const std::vector<double>& fractions, SizeAxis axis,
                                std::uint64_t seed,
                                TestAveraging averaging = TestAveraging::Signal,
                                const std::filesystem::path& record_dir = {});

inline const std::vector<double> kDefaultFractions = {0.25, 0.5, 0.75, 1.0};

// ---------------------------------------------------------------------------

inline const std::vector<std::string> kCategories = {"animal", "food", "vehicle", "tool",
                                                     "others"};

struct RDM {
  Matrix<double> matrix;  // (n, n), row i = EEG of concept i, col j = template j
  std::vector<std::string> concepts;
  std::vector<std::string> categories;
};

// Mean EEG feature per concept against the templates, rows and columns
// grouped by kCategories order.  Unmapped concepts raise MappingError.
RDM rdm_from_features(const Matrix<double>& features, const std::vector<std::string>& concepts,
                      const TemplateBank& tb, const std::map<std::string, std::string>& category_map);

RDM rdm(const Checkpoint& model, const EEGEpochSet& test, const TemplateBank& tb,
        const std::map<std::string, std::string>& category_map);

void write_rdm_csv(std::ostream& out, const RDM& r);

// ---------------------------------------------------------------------------

inline constexpr double kMorletCycles = 7.0;

// 2, 4, ..., 100 Hz.
std::vector<double> default_frequencies();

// Morlet power (n_freqs, T) averaged over `channels` and trials.
Matrix<double> time_frequency(const EEGEpochSet& x, const std::vector<Index>& channels,
                              const std::vector<double>& freqs);

// Per-electrode Grad-CAM of the matched-pair cosine score, taken at the
// spatial module output and averaged over trials.  Max-normalized to 1.
Vector<double> grad_cam_spatial(const Checkpoint& model, const EEGEpochSet& x,
                                const TemplateBank& tb);

// Writes a matrix with optional row and column labels.
void write_matrix_csv(std::ostream& out, const Matrix<double>& m,
                      const std::vector<std::string>& row_labels = {},
                      const std::vector<std::string>& col_labels = {});

// FNV-1a over every parameter tensor.
std::string params_digest(const EncoderParams<float>& params);

}  // namespace nicekit

#endif  // NICE_ANALYSIS_HPP
