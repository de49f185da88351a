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

#include "nice/config.hpp"

#include <fstream>

namespace nicekit {

namespace {

using json = nlohmann::json;

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Numbers unify across integer and floating point when the default is
// floating; an integer default demands an integer.  Null defaults accept a
// number or null.
bool compatible(const json& def, const json& value) {
  if (def.is_null()) return value.is_null() || value.is_number();
  if (def.is_number_float()) return value.is_number();
  if (def.is_number_unsigned()) return value.is_number_unsigned() ||
                                       (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  if (def.is_number_integer()) return value.is_number_integer();
  return def.type() == value.type();
}

void merge_into(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ValidationError((prefix.empty() ? std::string("config") : prefix) +
                          ": expected an object");
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string field = join_path(prefix, it.key());
    if (!base.contains(it.key())) throw ValidationError(field + ": unknown field");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), field);
    } else if (!compatible(slot, it.value())) {
      throw ValidationError(field + ": expected " + std::string(slot.is_null() ? "number or null"
                                                                               : slot.type_name()) +
                            ", got " + it.value().type_name());
    } else {
      slot = it.value();
    }
  }
}

template <typename T>
T field(const json& doc, const std::string& path) {
  const json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (!node->contains(key)) throw ValidationError(path + ": missing");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(path + ": wrong type (" + node->type_name() + ")");
  }
}

template <typename Fn>
auto checked(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ArgumentError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::filesystem::path or_default(const std::filesystem::path& given,
                                 const std::filesystem::path& dir, const char* name) {
  return given.empty() ? dir / name : given;
}

}  // namespace

std::filesystem::path RunConfig::train_epochs() const {
  return or_default(paths.train_epochs, paths.output_dir, "train.eegt");
}
std::filesystem::path RunConfig::test_epochs() const {
  return or_default(paths.test_epochs, paths.output_dir, "test.eegt");
}
std::filesystem::path RunConfig::feature_bank() const {
  return or_default(paths.feature_bank, paths.output_dir, "images.feat");
}
std::filesystem::path RunConfig::template_bank() const {
  return or_default(paths.template_bank, paths.output_dir, "templates.feat");
}
std::filesystem::path RunConfig::checkpoint() const {
  return or_default(paths.checkpoint, paths.output_dir, "model.ckpt");
}
std::filesystem::path RunConfig::category_map() const {
  return or_default(paths.category_map, paths.output_dir, "categories.json");
}

json default_config_json() {
  const HyperParams hp;
  const TrainConfig tc;
  const AnalysisConfig an;
  json bands = json::array();
  for (const auto& b : an.bands) bands.push_back(b.name);
  return {
      {"seed", std::uint64_t{0}},
      {"paths",
       {{"raw_train_epochs", ""},
        {"raw_test_epochs", ""},
        {"train_epochs", ""},
        {"test_epochs", ""},
        {"feature_bank", ""},
        {"template_bank", ""},
        {"checkpoint", ""},
        {"category_map", ""},
        {"output_dir", "out"}}},
      {"hyper",
       {{"k", hp.kernels},
        {"m1", hp.temporal_kernel},
        {"m2", hp.pool_kernel},
        {"s2", hp.pool_stride},
        {"spatial_module", to_string(hp.spatial)},
        {"ga_residual", hp.ga_residual}}},
      {"train",
       {{"batch_size", tc.batch_size},
        {"epochs", tc.epochs},
        {"lr", tc.lr},
        {"beta1", tc.beta1},
        {"beta2", tc.beta2},
        {"eps", tc.eps},
        {"n_val", tc.n_val},
        {"max_temperature", *tc.max_temperature},
        {"average_repetitions", true}}},
      {"preprocess",
       {{"baseline_ms", kDefaultBaselineMs},
        {"target_hz", 250.0},
        {"mvnn_lambda", kDefaultShrinkage},
        {"crop_start_ms", 0.0},
        {"crop_end_ms", nullptr},
        {"region_map", ""}}},
      {"analysis",
       {{"time_mode", to_string(an.time_mode)},
        {"time_step_ms", an.time_grid.step_ms},
        {"time_width_ms", an.time_grid.width_ms},
        {"time_retrain", an.time_retrain},
        {"bands", bands},
        {"fractions", an.fractions},
        {"size_axis", to_string(an.size_axis)},
        {"test_reps", an.test_reps},
        {"tfr_freqs", an.tfr_freqs},
        {"tfr_channels", json::array()},
        {"test_averaging", to_string(an.test_averaging)}}},
  };
}

json merge_config(const json& user) {
  json base = default_config_json();
  if (!user.is_null()) merge_into(base, user, "");
  return base;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ValidationError("override \"" + std::string(assignment) + "\" must look like key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  // Build a nested object and merge it, so the usual schema checks apply.
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const auto dot = rest.find('.', start);
    parts.push_back(rest.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_into(doc, patch, "");
}

RunConfig parse_config(const json& m) {
  RunConfig c;
  c.seed = field<std::uint64_t>(m, "seed");

  auto& p = c.paths;
  p.raw_train_epochs = field<std::string>(m, "paths.raw_train_epochs");
  p.raw_test_epochs = field<std::string>(m, "paths.raw_test_epochs");
  p.train_epochs = field<std::string>(m, "paths.train_epochs");
  p.test_epochs = field<std::string>(m, "paths.test_epochs");
  p.feature_bank = field<std::string>(m, "paths.feature_bank");
  p.template_bank = field<std::string>(m, "paths.template_bank");
  p.checkpoint = field<std::string>(m, "paths.checkpoint");
  p.category_map = field<std::string>(m, "paths.category_map");
  p.output_dir = field<std::string>(m, "paths.output_dir");
  if (p.output_dir.empty()) throw ValidationError("paths.output_dir: must not be empty");

  auto& h = c.hyper;
  h.kernels = field<Index>(m, "hyper.k");
  h.temporal_kernel = field<Index>(m, "hyper.m1");
  h.pool_kernel = field<Index>(m, "hyper.m2");
  h.pool_stride = field<Index>(m, "hyper.s2");
  h.spatial = checked("hyper.spatial_module", [&] {
    return parse_spatial_module(field<std::string>(m, "hyper.spatial_module"));
  });
  h.ga_residual = field<bool>(m, "hyper.ga_residual");
  for (const char* name : {"hyper.k", "hyper.m1", "hyper.m2", "hyper.s2"}) {
    if (field<Index>(m, name) < 1) throw ValidationError(std::string(name) + ": must be >= 1");
  }

  auto& t = c.train;
  t.batch_size = field<Index>(m, "train.batch_size");
  t.epochs = field<Index>(m, "train.epochs");
  t.lr = field<double>(m, "train.lr");
  t.beta1 = field<double>(m, "train.beta1");
  t.beta2 = field<double>(m, "train.beta2");
  t.eps = field<double>(m, "train.eps");
  t.n_val = field<Index>(m, "train.n_val");
  t.max_temperature = field<double>(m, "train.max_temperature");
  t.seed = c.seed;
  checked("train", [&] {
    t.validate();
    return 0;
  });
  c.average_train_repetitions = field<bool>(m, "train.average_repetitions");

  auto& pp = c.preprocess;
  pp.baseline_ms = field<double>(m, "preprocess.baseline_ms");
  pp.target_hz = field<double>(m, "preprocess.target_hz");
  pp.mvnn_lambda = field<double>(m, "preprocess.mvnn_lambda");
  pp.crop_start_ms = field<double>(m, "preprocess.crop_start_ms");
  if (!m["preprocess"]["crop_end_ms"].is_null()) pp.crop_end_ms = field<double>(m, "preprocess.crop_end_ms");
  pp.region_map = field<std::string>(m, "preprocess.region_map");
  if (!(pp.baseline_ms >= 0.0)) throw ValidationError("preprocess.baseline_ms: must be >= 0");
  if (!(pp.target_hz > 0.0)) throw ValidationError("preprocess.target_hz: must be positive");
  if (!(pp.mvnn_lambda >= 0.0 && pp.mvnn_lambda <= 1.0)) {
    throw ValidationError("preprocess.mvnn_lambda: must lie in [0, 1]");
  }

  auto& a = c.analysis;
  a.time_mode = checked("analysis.time_mode", [&] {
    return parse_time_sweep(field<std::string>(m, "analysis.time_mode"));
  });
  a.time_grid.step_ms = field<double>(m, "analysis.time_step_ms");
  a.time_grid.width_ms = field<double>(m, "analysis.time_width_ms");
  if (!(a.time_grid.step_ms > 0.0)) throw ValidationError("analysis.time_step_ms: must be positive");
  if (!(a.time_grid.width_ms > 0.0)) throw ValidationError("analysis.time_width_ms: must be positive");
  a.time_retrain = field<bool>(m, "analysis.time_retrain");
  a.bands.clear();
  for (const auto& name : field<std::vector<std::string>>(m, "analysis.bands")) {
    a.bands.push_back(checked("analysis.bands", [&] { return BandSpec::named(name); }));
  }
  a.fractions = field<std::vector<double>>(m, "analysis.fractions");
  for (double f : a.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("analysis.fractions: values must lie in (0, 1]");
  }
  a.size_axis = checked("analysis.size_axis", [&] {
    return parse_size_axis(field<std::string>(m, "analysis.size_axis"));
  });
  a.test_reps = field<std::vector<Index>>(m, "analysis.test_reps");
  for (Index r : a.test_reps) {
    if (r < 1) throw ValidationError("analysis.test_reps: values must be >= 1");
  }
  a.tfr_freqs = field<std::vector<double>>(m, "analysis.tfr_freqs");
  for (double f : a.tfr_freqs) {
    if (!(f > 0.0)) throw ValidationError("analysis.tfr_freqs: values must be positive");
  }
  a.tfr_channels = field<std::vector<std::string>>(m, "analysis.tfr_channels");
  a.test_averaging = checked("analysis.test_averaging", [&] {
    return parse_test_averaging(field<std::string>(m, "analysis.test_averaging"));
  });
  return c;
}

json effective_config(const json& merged, const RunConfig& cfg) {
  json out = merged;
  auto& p = out["paths"];
  p["train_epochs"] = cfg.train_epochs().string();
  p["test_epochs"] = cfg.test_epochs().string();
  p["feature_bank"] = cfg.feature_bank().string();
  p["template_bank"] = cfg.template_bank().string();
  p["checkpoint"] = cfg.checkpoint().string();
  p["category_map"] = cfg.category_map().string();
  return out;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path.string() + ": cannot open");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ValidationError(path.string() + ": not valid JSON");
  return doc;
}

// ---------------------------------------------------------------------------

json to_json(const SynthRequest& r) {
  const auto& s = r.spec;
  return {{"n_concepts", s.n_concepts},
          {"images_per_concept", s.images_per_concept},
          {"repetitions", s.repetitions},
          {"channels", s.channels},
          {"samples", s.samples},
          {"feature_dim", s.feature_dim},
          {"sample_rate", s.sample_rate},
          {"mixing_seed", s.mixing_seed},
          {"data_seed", s.data_seed},
          {"noise_std", s.noise_std},
          {"window_start", s.window_start},
          {"window_end", s.window_end},
          {"signal_channels", s.signal_channels},
          {"carrier_hz", s.carrier_hz},
          {"image_jitter", s.image_jitter},
          {"templates_per_concept", s.templates_per_concept},
          {"n_categories", s.n_categories},
          {"category_spread", s.category_spread},
          {"test_concepts", r.test_concepts},
          {"test_repetitions", r.test_repetitions}};
}

SynthRequest parse_synth_request(const json& doc) {
  json merged = to_json(SynthRequest{});
  if (!doc.is_null()) merge_into(merged, doc, "spec");
  SynthRequest r;
  auto& s = r.spec;
  s.n_concepts = field<Index>(merged, "n_concepts");
  s.images_per_concept = field<Index>(merged, "images_per_concept");
  s.repetitions = field<Index>(merged, "repetitions");
  s.channels = field<Index>(merged, "channels");
  s.samples = field<Index>(merged, "samples");
  s.feature_dim = field<Index>(merged, "feature_dim");
  s.sample_rate = field<double>(merged, "sample_rate");
  s.mixing_seed = field<std::uint64_t>(merged, "mixing_seed");
  s.data_seed = field<std::uint64_t>(merged, "data_seed");
  s.noise_std = field<double>(merged, "noise_std");
  s.window_start = field<Index>(merged, "window_start");
  s.window_end = field<Index>(merged, "window_end");
  s.signal_channels = field<Index>(merged, "signal_channels");
  s.carrier_hz = field<double>(merged, "carrier_hz");
  s.image_jitter = field<double>(merged, "image_jitter");
  s.templates_per_concept = field<Index>(merged, "templates_per_concept");
  s.n_categories = field<Index>(merged, "n_categories");
  s.category_spread = field<double>(merged, "category_spread");
  r.test_concepts = field<Index>(merged, "test_concepts");
  r.test_repetitions = field<Index>(merged, "test_repetitions");
  checked("spec", [&] {
    s.validate();
    return 0;
  });
  if (r.test_concepts < 1 || r.test_repetitions < 1) {
    throw ValidationError("spec.test_concepts and spec.test_repetitions must be >= 1");
  }
  return r;
}

}  // namespace nicekit
