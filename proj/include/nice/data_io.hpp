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

#ifndef NICE_DATA_IO_HPP
#define NICE_DATA_IO_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nice/tensor.hpp"

namespace nicekit {

// Epoched EEG: one row per trial holding a row-major (C, T) block.
struct EEGEpochSet {
  RowMatrix<float> epochs;  // (n_trials, C * T), microvolt scale
  Index channels = 0;
  Index samples = 0;
  double sample_rate = 0.0;
  Index onset_sample = 0;   // samples recorded before stimulus onset
  std::vector<std::string> channel_names;
  std::vector<std::string> stimulus_ids;
  std::vector<std::string> concept_ids;
  std::vector<std::int64_t> repetition_index;

  Index trials() const { return epochs.rows(); }

  Eigen::Map<RowMatrix<float>> trial(Index i) {
    return Eigen::Map<RowMatrix<float>>(epochs.row(i).data(), channels, samples);
  }
  Eigen::Map<const RowMatrix<float>> trial(Index i) const {
    return Eigen::Map<const RowMatrix<float>>(epochs.row(i).data(), channels, samples);
  }

  // Post-onset length in milliseconds.
  double duration_ms() const { return double(samples - onset_sample) * 1000.0 / sample_rate; }

  // Throws IntegrityError on any violated invariant.
  void validate() const;
};

// Trials `rows` of `set`, metadata carried along.
EEGEpochSet subset(const EEGEpochSet& set, std::span<const Index> rows);

// (n, 1, C, T) view of the given trials (all trials when `rows` is empty).
Tensor4<float> to_tensor(const EEGEpochSet& set, std::span<const Index> rows = {});

void save_epochs(const std::filesystem::path& path, const EEGEpochSet& set);
EEGEpochSet load_epochs(const std::filesystem::path& path);

// Precomputed image features with an id -> row index.
class FeatureBank {
 public:
  FeatureBank() = default;
  FeatureBank(RowMatrix<float> features, std::vector<std::string> image_ids,
              std::vector<std::string> concept_ids, std::string encoder_tag = {});

  const RowMatrix<float>& features() const { return features_; }
  const std::vector<std::string>& image_ids() const { return image_ids_; }
  const std::vector<std::string>& concept_ids() const { return concept_ids_; }
  const std::string& encoder_tag() const { return encoder_tag_; }
  Index rows() const { return features_.rows(); }
  Index dim() const { return features_.cols(); }

  std::optional<Index> find(std::string_view image_id) const;
  Index row_of(std::string_view image_id) const;  // throws IntegrityError when absent

  // Rows whose concept id is `concept`.
  std::vector<Index> rows_of_concept(std::string_view concept_id) const;

 private:
  RowMatrix<float> features_;
  std::vector<std::string> image_ids_;
  std::vector<std::string> concept_ids_;
  std::string encoder_tag_;
  std::unordered_map<std::string, Index> index_;
};

void save_feature_bank(const std::filesystem::path& path, const FeatureBank& bank);
FeatureBank load_feature_bank(const std::filesystem::path& path);

struct TrialPair {
  Index trial = 0;
  Index feature_row = 0;
};

// Stimulus-response pairs: every trial linked to the feature row of its own
// stimulus image.
struct PairedDataset {
  std::shared_ptr<const EEGEpochSet> eeg;
  std::shared_ptr<const FeatureBank> bank;
  std::vector<TrialPair> pairs;

  Index size() const { return static_cast<Index>(pairs.size()); }
  Tensor4<float> trials() const;
  Matrix<float> features() const;  // (size, D), paired rows as stored
  std::vector<std::string> concepts() const;
  std::vector<Index> trial_indices() const;
};

PairedDataset make_pairs(std::shared_ptr<const EEGEpochSet> eeg,
                         std::shared_ptr<const FeatureBank> bank);

inline constexpr Index kDefaultValidationTrials = 740;

// Disjoint, exhaustive, seeded split of the pairs.
std::pair<PairedDataset, PairedDataset> split_train_val(const PairedDataset& ds,
                                                        Index n_val = kDefaultValidationTrials,
                                                        std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Synthetic planted-signal oracle.
//
// Concept vectors are random unit vectors in R^D; image features perturb and
// renormalize them.  A clean trial is a fixed linear image A f of the stimulus
// feature, placed on the first `signal_channels` electrodes inside the sample
// window and zero elsewhere.  White Gaussian noise is added with standard
// deviation noise_std times the clean RMS (1/sqrt(D) by construction).

struct SynthSpec {
  Index n_concepts = 200;
  Index images_per_concept = 10;
  Index repetitions = 4;
  Index channels = 32;
  Index samples = 250;
  Index feature_dim = 64;
  double sample_rate = 250.0;
  std::uint64_t mixing_seed = 1;
  std::uint64_t data_seed = 2;
  Index first_concept = 0;        // concept numbering offset, for held-out splits
  double noise_std = 1.0;         // relative to clean signal RMS
  Index window_start = 25;
  Index window_end = 150;
  Index signal_channels = 0;      // 0 means every electrode
  double carrier_hz = 0.0;        // 0: broadband; otherwise a narrowband tone
  double image_jitter = 0.1;      // image perturbation around its concept
  Index templates_per_concept = 1;
  Index n_categories = 0;         // 0: unclustered concepts
  double category_spread = 0.6;
  std::string split = "train";    // salts the noise stream

  Index active_channels() const { return signal_channels == 0 ? channels : signal_channels; }
  void validate() const;
};

struct SynthGroundTruth {
  RowMatrix<float> mixing;            // (rows, D)
  FeatureBank concepts;               // one unit row per concept
  std::vector<Index> categories;      // per concept, empty when unclustered
  Index window_start = 0;
  Index window_end = 0;
  Index signal_channels = 0;
  double carrier_hz = 0.0;
};

struct SynthDataset {
  EEGEpochSet eeg;
  FeatureBank bank;        // stimulus image features
  FeatureBank templates;   // extra, unseen images per concept
  SynthGroundTruth truth;
};

SynthDataset synth_generate(const SynthSpec& spec);

// Spec of the held-out split sharing the mixing matrix: concepts numbered
// after the training ones, one image each, `repetitions` trials per image.
SynthSpec held_out_spec(const SynthSpec& train, Index n_concepts, Index repetitions);

// Writes concepts.feat, mixing.f32 (raw little-endian row-major) and truth.json.
void save_ground_truth(const std::filesystem::path& dir, const SynthGroundTruth& truth);

// Montage labels of a 63-electrode 10-10 cap.
const std::vector<std::string>& standard_montage_63();

}  // namespace nicekit

#endif  // NICE_DATA_IO_HPP
