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

// Declarative run configuration for the command line tool.  A JSON document
// is merged over the defaults; unknown keys and mistyped values raise
// ValidationError naming the field.

#ifndef NICE_CONFIG_HPP
#define NICE_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nice/analysis.hpp"
#include "nice/contrastive.hpp"
#include "nice/encoder.hpp"
#include "nice/preprocess.hpp"
#include "nice/zeroshot.hpp"

namespace nicekit {

struct PathsConfig {
  // Empty entries resolve to fixed names under output_dir.
  std::filesystem::path raw_train_epochs;
  std::filesystem::path raw_test_epochs;
  std::filesystem::path train_epochs;   // train.eegt
  std::filesystem::path test_epochs;    // test.eegt
  std::filesystem::path feature_bank;   // images.feat
  std::filesystem::path template_bank;  // templates.feat
  std::filesystem::path checkpoint;     // model.ckpt
  std::filesystem::path category_map;   // categories.json
  std::filesystem::path output_dir = "out";
};

struct PreprocessConfig {
  double baseline_ms = kDefaultBaselineMs;
  double target_hz = 250.0;
  double mvnn_lambda = kDefaultShrinkage;
  double crop_start_ms = 0.0;
  std::optional<double> crop_end_ms;  // end of epoch when unset
  std::filesystem::path region_map;
};

struct AnalysisConfig {
  TimeSweep time_mode = TimeSweep::Forward;
  TimeGrid time_grid;
  bool time_retrain = false;
  std::vector<BandSpec> bands = standard_bands();
  std::vector<double> fractions = kDefaultFractions;
  SizeAxis size_axis = SizeAxis::Conditions;
  std::vector<Index> test_reps = default_repetition_grid();
  std::vector<double> tfr_freqs = default_frequencies();
  std::vector<std::string> tfr_channels;  // occipital electrodes when empty
  TestAveraging test_averaging = TestAveraging::Signal;
};

struct RunConfig {
  std::uint64_t seed = 0;
  PathsConfig paths;
  HyperParams hyper;
  TrainConfig train;
  bool average_train_repetitions = true;
  PreprocessConfig preprocess;
  AnalysisConfig analysis;

  std::filesystem::path out(std::string_view name) const { return paths.output_dir / name; }
  std::filesystem::path train_epochs() const;
  std::filesystem::path test_epochs() const;
  std::filesystem::path feature_bank() const;
  std::filesystem::path template_bank() const;
  std::filesystem::path checkpoint() const;
  std::filesystem::path category_map() const;
};

// Every field with its default value.
nlohmann::json default_config_json();

// Defaults overlaid with `user`.  Unknown keys or type mismatches throw.
nlohmann::json merge_config(const nlohmann::json& user);

// Applies "a.b.c=value"; value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Typed view of a merged document; enumerations and ranges are validated.
RunConfig parse_config(const nlohmann::json& merged);

// Merged document with every path resolved, as persisted next to outputs.
nlohmann::json effective_config(const nlohmann::json& merged, const RunConfig& cfg);

nlohmann::json load_json_file(const std::filesystem::path& path);

// Synthetic dataset description for the synth command.
struct SynthRequest {
  SynthSpec spec;
  Index test_concepts = 50;
  Index test_repetitions = 4;
};

SynthRequest parse_synth_request(const nlohmann::json& doc);
nlohmann::json to_json(const SynthRequest& request);

}  // namespace nicekit

#endif  // NICE_CONFIG_HPP
