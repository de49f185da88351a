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

#ifndef NICE_ZEROSHOT_HPP
#define NICE_ZEROSHOT_HPP

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nice/data_io.hpp"
#include "nice/encoder.hpp"

namespace nicekit {

// One unit-norm template per concept.
struct TemplateBank {
  Matrix<double> templates;  // (n_concepts, D)
  std::vector<std::string> concept_ids;
  std::vector<Index> image_counts;  // images averaged into each template

  Index size() const { return templates.rows(); }
  Index dim() const { return templates.cols(); }
  Index index_of(std::string_view concept_id) const;  // CoverageError when absent
};

// Normalized mean of each concept's normalized feature rows.  When stimulus
// ids are given, any template image among them raises LeakageError.
TemplateBank build_templates(const FeatureBank& bank, const std::vector<std::string>& concepts,
                             std::span<const std::string> stimulus_ids = {});

// Distinct concept ids in order of first appearance.
std::vector<std::string> unique_concepts(const std::vector<std::string>& ids);

inline const std::vector<Index> kDefaultTopK = {1, 5};

struct SimilarityReport {
  Matrix<double> similarity;  // (n_trials, n_concepts) cosine
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ranking;
  std::vector<Index> truth;        // template row of each trial's concept
  std::vector<Index> true_rank;    // 0-based position of the truth in the ranking
  std::map<Index, std::vector<bool>> topk_hits;

  Index trials() const { return similarity.rows(); }
};

// Cosine similarity against every template, ranked descending with ties
// going to the lower template index.  All-zero feature rows score 0.
SimilarityReport classify(const Matrix<double>& features, const TemplateBank& tb,
                          const std::vector<std::string>& true_concepts,
                          const std::vector<Index>& ks = kDefaultTopK);

double topk_accuracy(const SimilarityReport& report, Index k);

// Per-trial JSON with the top-10 ranked concepts and a summary of accuracies.
void write_report_json(std::ostream& out, const SimilarityReport& report, const TemplateBank& tb,
                       const std::vector<std::string>& trial_ids = {});
void write_summary_csv(std::ostream& out, const SimilarityReport& report);

// How multi-repetition test trials are combined.
enum class TestAveraging { Signal, Feature, None };

std::string to_string(TestAveraging mode);
TestAveraging parse_test_averaging(std::string_view name);

struct EncodedTestSet {
  Matrix<double> features;  // (n, D)
  std::vector<std::string> concepts;
  std::vector<std::string> stimuli;
};

// Signal: average repetitions per stimulus, then encode.  Feature: encode each
// trial, then average features per stimulus.  None: one row per trial.
EncodedTestSet encode_test_set(const EncoderParams<float>& params, const HyperParams& hp,
                               const EEGEpochSet& test, TestAveraging mode = TestAveraging::Signal);

// Encode + classify against templates of the test concepts.
SimilarityReport evaluate_zero_shot(const EncoderParams<float>& params, const HyperParams& hp,
                                    const EEGEpochSet& test, const TemplateBank& tb,
                                    const std::vector<Index>& ks = kDefaultTopK,
                                    TestAveraging mode = TestAveraging::Signal);

}  // namespace nicekit

#endif  // NICE_ZEROSHOT_HPP
