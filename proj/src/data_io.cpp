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

#include "nice/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "nice/binary_io.hpp"

namespace nicekit {

using json = nlohmann::json;

namespace {

constexpr std::uint32_t kEpochsVersion = 1;
constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
std::vector<T> json_list(const json& meta, const char* key, const std::string& where) {
  if (!meta.contains(key)) throw FormatError(where + ": metadata lacks \"" + key + "\"");
  try {
    return meta.at(key).get<std::vector<T>>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": bad \"" + key + "\": " + e.what());
  }
}

json parse_meta(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw CorruptionError(where + ": metadata is not valid JSON: " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// EEGEpochSet

void EEGEpochSet::validate() const {
  const auto n = static_cast<std::size_t>(trials());
  if (channels < 1 || samples < 1) throw IntegrityError("epoch set has empty dimensions");
  if (epochs.cols() != channels * samples) {
    throw IntegrityError("epoch rows hold " + std::to_string(epochs.cols()) +
                         " values, expected C * T = " + std::to_string(channels * samples));
  }
  if (stimulus_ids.size() != n || concept_ids.size() != n || repetition_index.size() != n) {
    throw IntegrityError("per-trial metadata length differs from trial count " +
                         std::to_string(n));
  }
  if (channel_names.size() != static_cast<std::size_t>(channels)) {
    throw IntegrityError("channel_names has " + std::to_string(channel_names.size()) +
                         " labels for " + std::to_string(channels) + " electrodes");
  }
  if (!(sample_rate > 0.0)) throw IntegrityError("sample_rate must be positive");
  if (onset_sample < 0 || onset_sample >= samples) {
    throw IntegrityError("onset_sample outside the epoch");
  }
  std::set<std::pair<std::string, std::int64_t>> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen.emplace(stimulus_ids[i], repetition_index[i]).second) {
      throw IntegrityError("duplicate (stimulus, repetition) pair (" + stimulus_ids[i] + ", " +
                           std::to_string(repetition_index[i]) + ")");
    }
  }
}

EEGEpochSet subset(const EEGEpochSet& set, std::span<const Index> rows) {
  EEGEpochSet out;
  out.channels = set.channels;
  out.samples = set.samples;
  out.sample_rate = set.sample_rate;
  out.onset_sample = set.onset_sample;
  out.channel_names = set.channel_names;
  out.epochs.resize(static_cast<Index>(rows.size()), set.epochs.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    if (r < 0 || r >= set.trials()) throw ArgumentError("subset: trial index out of range");
    out.epochs.row(static_cast<Index>(i)) = set.epochs.row(r);
    out.stimulus_ids.push_back(set.stimulus_ids[r]);
    out.concept_ids.push_back(set.concept_ids[r]);
    out.repetition_index.push_back(set.repetition_index[r]);
  }
  return out;
}

Tensor4<float> to_tensor(const EEGEpochSet& set, std::span<const Index> rows) {
  const Index n = rows.empty() ? set.trials() : static_cast<Index>(rows.size());
  Tensor4<float> out(n, 1, set.channels, set.samples);
  const Index plane = set.channels * set.samples;
  for (Index i = 0; i < n; ++i) {
    const Index r = rows.empty() ? i : rows[static_cast<std::size_t>(i)];
    out.flat().segment(i * plane, plane) = set.epochs.row(r).transpose();
  }
  return out;
}

void save_epochs(const std::filesystem::path& path, const EEGEpochSet& set) {
  set.validate();
  io::Writer w(path);
  w.magic("EEGT");
  w.scalar<std::uint32_t>(kEpochsVersion);
  w.scalar<std::uint64_t>(static_cast<std::uint64_t>(set.trials()));
  w.scalar<std::uint64_t>(static_cast<std::uint64_t>(set.channels));
  w.scalar<std::uint64_t>(static_cast<std::uint64_t>(set.samples));
  w.floats(set.epochs.data(), static_cast<std::size_t>(set.epochs.size()));
  json meta = {{"sample_rate", set.sample_rate},
               {"channel_names", set.channel_names},
               {"stimulus_ids", set.stimulus_ids},
               {"concept_ids", set.concept_ids},
               {"repetition_index", set.repetition_index},
               {"onset_sample", set.onset_sample}};
  w.blob(meta.dump());
  w.finish();
}

EEGEpochSet load_epochs(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("EEGT");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kEpochsVersion) {
    throw FormatError(r.path() + ": unsupported EEGT version " + std::to_string(version));
  }
  const auto n = r.scalar<std::uint64_t>();
  const auto c = r.scalar<std::uint64_t>();
  const auto t = r.scalar<std::uint64_t>();
  const auto count = io::checked_product({n, c, t}, r.path());
  if (c == 0 || t == 0) throw CorruptionError(r.path() + ": zero electrode or sample count");
  EEGEpochSet set;
  set.channels = static_cast<Index>(c);
  set.samples = static_cast<Index>(t);
  if (count > r.remaining() / sizeof(float)) {
    throw CorruptionError(r.path() + ": header declares " + std::to_string(n) +
                          " trials but the payload is truncated");
  }
  set.epochs.resize(static_cast<Index>(n), static_cast<Index>(c * t));
  r.floats(set.epochs.data(), count);
  const json meta = parse_meta(r.blob(), r.path());
  set.sample_rate = meta.value("sample_rate", 0.0);
  set.onset_sample = meta.value("onset_sample", Index{0});
  set.channel_names = json_list<std::string>(meta, "channel_names", r.path());
  set.stimulus_ids = json_list<std::string>(meta, "stimulus_ids", r.path());
  set.concept_ids = json_list<std::string>(meta, "concept_ids", r.path());
  set.repetition_index = json_list<std::int64_t>(meta, "repetition_index", r.path());
  if (r.remaining() != 0) throw CorruptionError(r.path() + ": trailing bytes after metadata");
  set.validate();
  return set;
}

// ---------------------------------------------------------------------------
// FeatureBank

FeatureBank::FeatureBank(RowMatrix<float> features, std::vector<std::string> image_ids,
                         std::vector<std::string> concept_ids, std::string encoder_tag)
    : features_(std::move(features)),
      image_ids_(std::move(image_ids)),
      concept_ids_(std::move(concept_ids)),
      encoder_tag_(std::move(encoder_tag)) {
  const auto n = static_cast<std::size_t>(features_.rows());
  if (features_.cols() < 1) throw IntegrityError("feature bank dimension must be >= 1");
  if (image_ids_.size() != n || concept_ids_.size() != n) {
    throw IntegrityError("feature bank ids do not match its " + std::to_string(n) + " rows");
  }
  index_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!index_.emplace(image_ids_[i], static_cast<Index>(i)).second) {
      throw IntegrityError("duplicate image id \"" + image_ids_[i] + "\" in feature bank");
    }
    if (features_.row(static_cast<Index>(i)).squaredNorm() == 0.0f) {
      throw IntegrityError("feature row for \"" + image_ids_[i] + "\" has zero norm");
    }
  }
}

std::optional<Index> FeatureBank::find(std::string_view image_id) const {
  auto it = index_.find(std::string(image_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Index FeatureBank::row_of(std::string_view image_id) const {
  auto row = find(image_id);
  if (!row) throw IntegrityError("image id \"" + std::string(image_id) + "\" not in feature bank");
  return *row;
}

std::vector<Index> FeatureBank::rows_of_concept(std::string_view concept_id) const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < concept_ids_.size(); ++i) {
    if (concept_ids_[i] == concept_id) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

void save_feature_bank(const std::filesystem::path& path, const FeatureBank& bank) {
  io::Writer w(path);
  w.magic("FEAT");
  w.scalar<std::uint32_t>(kFeatureVersion);
  w.scalar<std::uint64_t>(static_cast<std::uint64_t>(bank.rows()));
  w.scalar<std::uint64_t>(static_cast<std::uint64_t>(bank.dim()));
  w.floats(bank.features().data(), static_cast<std::size_t>(bank.features().size()));
  json meta = {{"image_ids", bank.image_ids()},
               {"concept_ids", bank.concept_ids()},
               {"encoder_tag", bank.encoder_tag()}};
  w.blob(meta.dump());
  w.finish();
}

FeatureBank load_feature_bank(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("FEAT");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kFeatureVersion) {
    throw FormatError(r.path() + ": unsupported FEAT version " + std::to_string(version));
  }
  const auto rows = r.scalar<std::uint64_t>();
  const auto dim = r.scalar<std::uint64_t>();
  const auto count = io::checked_product({rows, dim}, r.path());
  if (count > r.remaining() / sizeof(float)) {
    throw CorruptionError(r.path() + ": header declares " + std::to_string(rows) +
                          " rows but the payload is truncated");
  }
  RowMatrix<float> features(static_cast<Index>(rows), static_cast<Index>(dim));
  r.floats(features.data(), count);
  const json meta = parse_meta(r.blob(), r.path());
  if (r.remaining() != 0) throw CorruptionError(r.path() + ": trailing bytes after metadata");
  return FeatureBank(std::move(features), json_list<std::string>(meta, "image_ids", r.path()),
                     json_list<std::string>(meta, "concept_ids", r.path()),
                     meta.value("encoder_tag", std::string{}));
}

// ---------------------------------------------------------------------------
// Pairing

Tensor4<float> PairedDataset::trials() const {
  return to_tensor(*eeg, trial_indices());
}

std::vector<Index> PairedDataset::trial_indices() const {
  std::vector<Index> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back(p.trial);
  return rows;
}

Matrix<float> PairedDataset::features() const {
  Matrix<float> out(size(), bank->dim());
  for (Index i = 0; i < size(); ++i) {
    out.row(i) = bank->features().row(pairs[static_cast<std::size_t>(i)].feature_row);
  }
  return out;
}

std::vector<std::string> PairedDataset::concepts() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(eeg->concept_ids[static_cast<std::size_t>(p.trial)]);
  return out;
}

PairedDataset make_pairs(std::shared_ptr<const EEGEpochSet> eeg,
                         std::shared_ptr<const FeatureBank> bank) {
  PairedDataset ds;
  ds.pairs.reserve(static_cast<std::size_t>(eeg->trials()));
  for (Index i = 0; i < eeg->trials(); ++i) {
    ds.pairs.push_back({i, bank->row_of(eeg->stimulus_ids[static_cast<std::size_t>(i)])});
  }
  ds.eeg = std::move(eeg);
  ds.bank = std::move(bank);
  return ds;
}

std::pair<PairedDataset, PairedDataset> split_train_val(const PairedDataset& ds, Index n_val,
                                                        std::uint64_t seed) {
  if (n_val < 0 || n_val >= ds.size()) {
    throw ArgumentError("validation size " + std::to_string(n_val) + " must be below the " +
                        std::to_string(ds.size()) + " available trials");
  }
  std::vector<std::size_t> order(ds.pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates so the split does not depend on the library's shuffle.
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  PairedDataset train{ds.eeg, ds.bank, {}};
  PairedDataset val{ds.eeg, ds.bank, {}};
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  for (auto i : val_idx) val.pairs.push_back(ds.pairs[i]);
  for (auto i : train_idx) train.pairs.push_back(ds.pairs[i]);
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Synthetic oracle

const std::vector<std::string>& standard_montage_63() {
  static const std::vector<std::string> labels = {
      "Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7",  "F5",  "F3",  "F1",
      "F2",  "F4",  "F6",  "F8",  "FT9", "FT7", "FC5", "FC3", "FC1", "FCz", "FC2",
      "FC4", "FC6", "FT8", "FT10", "T7", "C5",  "C3",  "C1",  "Cz",  "C2",  "C4",
      "C6",  "T8",  "TP9", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6",
      "TP8", "TP10", "P7", "P5",  "P3",  "P1",  "Pz",  "P2",  "P4",  "P6",  "P8",
      "PO7", "PO3", "POz", "PO4", "PO8", "O1",  "Oz",  "O2"};
  return labels;
}

void SynthSpec::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ArgumentError("synth spec: " + what);
  };
  need(n_concepts >= 1 && images_per_concept >= 1 && repetitions >= 1, "counts must be >= 1");
  need(channels >= 1 && samples >= 1 && feature_dim >= 1, "dimensions must be >= 1");
  need(sample_rate > 0.0, "sample_rate must be positive");
  need(0 <= window_start && window_start < window_end && window_end <= samples,
       "signal window must satisfy 0 <= start < end <= T");
  need(signal_channels >= 0 && signal_channels <= channels, "signal_channels out of range");
  need(noise_std >= 0.0 && image_jitter >= 0.0, "noise and jitter must be non-negative");
  need(carrier_hz >= 0.0 && carrier_hz <= sample_rate / 2, "carrier above Nyquist");
  need(templates_per_concept >= 1, "templates_per_concept must be >= 1");
  need(n_categories >= 0, "n_categories must be >= 0");
  need(first_concept >= 0, "first_concept must be >= 0");
}

namespace {

std::uint64_t string_salt(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::mt19937_64 stream(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  for (auto k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

Vector<double> gaussian(std::mt19937_64& rng, Index n, double std) {
  std::normal_distribution<double> dist(0.0, std);
  Vector<double> v(n);
  for (Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

enum : std::uint64_t { kConceptTag = 11, kImageTag = 12, kTemplateTag = 13, kNoiseTag = 14,
                       kCategoryTag = 15, kMixingTag = 16 };

}  // namespace

SynthDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  const Index d = spec.feature_dim;
  const Index active = spec.active_channels();
  const Index width = spec.window_end - spec.window_start;
  const bool narrowband = spec.carrier_hz > 0.0;
  const double unit = 1.0 / std::sqrt(double(d));

  // Mixing matrix, shared across splits through mixing_seed.
  const Index mix_rows = narrowband ? 2 * active : active * width;
  RowMatrix<double> mixing(mix_rows, d);
  {
    auto rng = stream({spec.mixing_seed, kMixingTag});
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Index i = 0; i < mix_rows; ++i)
      for (Index j = 0; j < d; ++j) mixing(i, j) = dist(rng) * unit;
  }

  SynthDataset out;
  std::vector<Vector<double>> concept_vecs;
  std::vector<Index> categories;
  std::vector<Vector<double>> centers;
  for (Index c = 0; c < spec.n_categories; ++c) {
    auto rng = stream({spec.data_seed, kCategoryTag, static_cast<std::uint64_t>(c)});
    centers.push_back(gaussian(rng, d, 1.0).normalized());
  }
  for (Index i = 0; i < spec.n_concepts; ++i) {
    const auto global = static_cast<std::uint64_t>(spec.first_concept + i);
    auto rng = stream({spec.data_seed, kConceptTag, global});
    Vector<double> v = gaussian(rng, d, unit);
    if (spec.n_categories > 0) {
      const Index cat = static_cast<Index>(global % static_cast<std::uint64_t>(spec.n_categories));
      v = centers[static_cast<std::size_t>(cat)] + spec.category_spread * v;
      categories.push_back(cat);
    }
    concept_vecs.push_back(v.normalized());
  }

  auto concept_name = [&](Index i) { return "concept_" + std::to_string(spec.first_concept + i); };

  // Stimulus and template images.
  RowMatrix<float> image_feats(spec.n_concepts * spec.images_per_concept, d);
  std::vector<std::string> image_ids, image_concepts;
  RowMatrix<float> tpl_feats(spec.n_concepts * spec.templates_per_concept, d);
  std::vector<std::string> tpl_ids, tpl_concepts;
  for (Index i = 0; i < spec.n_concepts; ++i) {
    const auto global = static_cast<std::uint64_t>(spec.first_concept + i);
    auto rng = stream({spec.data_seed, kImageTag, global});
    for (Index m = 0; m < spec.images_per_concept; ++m) {
      Vector<double> f = (concept_vecs[i] + spec.image_jitter * gaussian(rng, d, unit)).normalized();
      image_feats.row(i * spec.images_per_concept + m) = f.cast<float>().transpose();
      image_ids.push_back("img_" + std::to_string(global) + "_" + std::to_string(m));
      image_concepts.push_back(concept_name(i));
    }
    auto trng = stream({spec.data_seed, kTemplateTag, global});
    for (Index m = 0; m < spec.templates_per_concept; ++m) {
      Vector<double> f =
          (concept_vecs[i] + spec.image_jitter * gaussian(trng, d, unit)).normalized();
      tpl_feats.row(i * spec.templates_per_concept + m) = f.cast<float>().transpose();
      tpl_ids.push_back("tpl_" + std::to_string(global) + "_" + std::to_string(m));
      tpl_concepts.push_back(concept_name(i));
    }
  }

  // Trials.
  EEGEpochSet& eeg = out.eeg;
  eeg.channels = spec.channels;
  eeg.samples = spec.samples;
  eeg.sample_rate = spec.sample_rate;
  const auto& montage = standard_montage_63();
  for (Index c = 0; c < spec.channels; ++c) {
    eeg.channel_names.push_back(c < static_cast<Index>(montage.size())
                                    ? montage[static_cast<std::size_t>(c)]
                                    : "E" + std::to_string(c));
  }
  const Index n_trials = spec.n_concepts * spec.images_per_concept * spec.repetitions;
  eeg.epochs = RowMatrix<float>::Zero(n_trials, spec.channels * spec.samples);
  auto noise_rng = stream({spec.data_seed, kNoiseTag, string_salt(spec.split),
                           static_cast<std::uint64_t>(spec.first_concept)});
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = spec.noise_std * unit;
  Index row = 0;
  for (Index img = 0; img < image_feats.rows(); ++img) {
    const Vector<double> f = image_feats.row(img).transpose().cast<double>();
    const Vector<double> mixed = mixing * f;
    RowMatrix<double> clean = RowMatrix<double>::Zero(spec.channels, spec.samples);
    for (Index c = 0; c < active; ++c) {
      for (Index w = 0; w < width; ++w) {
        const Index t = spec.window_start + w;
        if (narrowband) {
          const double phase = 2.0 * M_PI * spec.carrier_hz * double(t) / spec.sample_rate;
          clean(c, t) = mixed[c] * std::cos(phase) + mixed[active + c] * std::sin(phase);
        } else {
          clean(c, t) = mixed[c * width + w];
        }
      }
    }
    for (Index rep = 0; rep < spec.repetitions; ++rep, ++row) {
      auto trial = eeg.trial(row);
      for (Index c = 0; c < spec.channels; ++c)
        for (Index t = 0; t < spec.samples; ++t)
          trial(c, t) = float(clean(c, t) + (sigma > 0.0 ? sigma * noise(noise_rng) : 0.0));
      eeg.stimulus_ids.push_back(image_ids[static_cast<std::size_t>(img)]);
      eeg.concept_ids.push_back(image_concepts[static_cast<std::size_t>(img)]);
      eeg.repetition_index.push_back(rep);
    }
  }
  eeg.validate();

  out.bank = FeatureBank(std::move(image_feats), std::move(image_ids), std::move(image_concepts),
                         "synthetic");
  out.templates =
      FeatureBank(std::move(tpl_feats), std::move(tpl_ids), std::move(tpl_concepts), "synthetic");

  RowMatrix<float> concepts(spec.n_concepts, d);
  std::vector<std::string> names;
  for (Index i = 0; i < spec.n_concepts; ++i) {
    concepts.row(i) = concept_vecs[static_cast<std::size_t>(i)].cast<float>().transpose();
    names.push_back(concept_name(i));
  }
  out.truth.mixing = mixing.cast<float>();
  out.truth.concepts = FeatureBank(std::move(concepts), names, names, "synthetic-concepts");
  out.truth.categories = std::move(categories);
  out.truth.window_start = spec.window_start;
  out.truth.window_end = spec.window_end;
  out.truth.signal_channels = active;
  out.truth.carrier_hz = spec.carrier_hz;
  return out;
}

SynthSpec held_out_spec(const SynthSpec& train, Index n_concepts, Index repetitions) {
  SynthSpec test = train;
  test.first_concept = train.first_concept + train.n_concepts;
  test.n_concepts = n_concepts;
  test.images_per_concept = 1;
  test.repetitions = repetitions;
  test.split = "test";
  return test;
}

void save_ground_truth(const std::filesystem::path& dir, const SynthGroundTruth& truth) {
  std::filesystem::create_directories(dir);
  save_feature_bank(dir / "concepts.feat", truth.concepts);
  {
    io::Writer w(dir / "mixing.f32");
    w.floats(truth.mixing.data(), static_cast<std::size_t>(truth.mixing.size()));
    w.finish();
  }
  json meta = {{"mixing_rows", truth.mixing.rows()},
               {"mixing_cols", truth.mixing.cols()},
               {"window_start", truth.window_start},
               {"window_end", truth.window_end},
               {"signal_channels", truth.signal_channels},
               {"carrier_hz", truth.carrier_hz},
               {"categories", truth.categories}};
  std::ofstream(dir / "truth.json") << meta.dump(2) << "\n";
}

}  // namespace nicekit
