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

#include "nice/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <unsupported/Eigen/FFT>

namespace nicekit {

namespace {

using json = nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt_ms(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::vector<Index> ks_for(const TemplateBank& tb) {
  return tb.size() >= 5 ? std::vector<Index>{1, 5} : std::vector<Index>{1, tb.size()};
}

AccuracyPoint accuracy_of(const SimilarityReport& rep, const TemplateBank& tb) {
  const auto ks = ks_for(tb);
  return {topk_accuracy(rep, ks[0]), topk_accuracy(rep, ks[1])};
}

// One sweep point, possibly restored from a record written by an earlier run.
struct PointJob {
  std::string label;
  double value = kNaN;
  std::function<AccuracyPoint()> run;
};

std::filesystem::path record_path(const std::filesystem::path& dir, const std::string& axis,
                                  std::size_t i) {
  return dir / (axis + "_" + std::to_string(i) + ".json");
}

std::optional<AccuracyPoint> load_record(const std::filesystem::path& path,
                                         const std::string& label) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    json j = json::parse(in);
    if (j.at("label").get<std::string>() != label) return std::nullopt;
    return AccuracyPoint{j.at("top1").get<double>(), j.at("top5").get<double>()};
  } catch (const json::exception&) {
    return std::nullopt;  // partial write from an interrupted run
  }
}

void save_record(const std::filesystem::path& path, const std::string& label, double value,
                 const AccuracyPoint& p) {
  json j = {{"label", label}, {"top1", p.top1}, {"top5", p.top5}};
  if (!std::isnan(value)) j["value"] = value;
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << j.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

SweepResult run_points(const std::string& axis, std::vector<PointJob> jobs,
                       const std::filesystem::path& record_dir) {
  if (!record_dir.empty()) std::filesystem::create_directories(record_dir);
  std::vector<AccuracyPoint> points(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    if (!record_dir.empty()) {
      const auto path = record_path(record_dir, axis, i);
      if (auto cached = load_record(path, jobs[i].label)) {
        points[i] = *cached;
        return;
      }
      points[i] = jobs[i].run();
      save_record(path, jobs[i].label, jobs[i].value, points[i]);
    } else {
      points[i] = jobs[i].run();
    }
  });
  SweepResult r;
  r.axis = axis;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    r.labels.push_back(jobs[i].label);
    r.values.push_back(jobs[i].value);
    r.top1.push_back(points[i].top1);
    r.top5.push_back(points[i].top5);
  }
  r.meta["points"] = std::to_string(jobs.size());
  r.validate();
  return r;
}

void put_model_meta(SweepResult& r, const Checkpoint& model, TestAveraging averaging) {
  r.meta["checkpoint"] = params_digest(model.params);
  r.meta["spatial_module"] = to_string(model.hyper.spatial);
  r.meta["test_averaging"] = to_string(averaging);
}

}  // namespace

void SweepResult::validate() const {
  const auto n = labels.size();
  if (values.size() != n || top1.size() != n || top5.size() != n) {
    throw IntegrityError("sweep \"" + axis + "\": field lengths differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(top1[i] >= 0.0 && top1[i] <= 1.0 && top5[i] >= 0.0 && top5[i] <= 1.0)) {
      throw IntegrityError("sweep \"" + axis + "\": accuracy outside [0, 1] at " + labels[i]);
    }
  }
}

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  result.validate();
  out << "axis,label,value,top1,top5\n";
  out << std::setprecision(10);
  for (std::size_t i = 0; i < result.size(); ++i) {
    out << result.axis << ',' << result.labels[i] << ',';
    if (!std::isnan(result.values[i])) out << result.values[i];
    out << ',' << result.top1[i] << ',' << result.top5[i] << '\n';
  }
}

unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("NICE_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), n);
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

AccuracyPoint evaluate_point(const EvalSetup& setup, const EEGEpochSet& test) {
  const auto rep = evaluate_zero_shot(setup.model.params, setup.model.hyper, test, setup.templates,
                                      ks_for(setup.templates), setup.averaging);
  return accuracy_of(rep, setup.templates);
}

std::string to_string(TimeSweep mode) {
  switch (mode) {
    case TimeSweep::Forward: return "forward";
    case TimeSweep::Backward: return "backward";
    case TimeSweep::Segment: return "segment";
  }
  return "forward";
}

TimeSweep parse_time_sweep(std::string_view name) {
  if (name == "forward") return TimeSweep::Forward;
  if (name == "backward") return TimeSweep::Backward;
  if (name == "segment") return TimeSweep::Segment;
  throw ArgumentError("time sweep mode must be forward, backward or segment, got \"" +
                      std::string(name) + "\"");
}

std::vector<TimeWindow> time_windows(double duration_ms, TimeSweep mode, const TimeGrid& grid) {
  if (!(grid.step_ms > 0.0) || (mode == TimeSweep::Segment && !(grid.width_ms > 0.0))) {
    throw ArgumentError("time grid step and width must be positive");
  }
  const double end = duration_ms;
  const double eps = 1e-9;
  std::vector<TimeWindow> out;
  switch (mode) {
    case TimeSweep::Forward:
      for (double x = grid.step_ms; x <= end + eps; x += grid.step_ms)
        out.push_back({0.0, std::min(x, end), x});
      break;
    case TimeSweep::Backward:
      for (double x = 0.0; x < end - eps; x += grid.step_ms) out.push_back({x, end, x});
      break;
    case TimeSweep::Segment:
      for (double x = 0.0; x + grid.width_ms <= end + eps; x += grid.step_ms)
        out.push_back({x, std::min(x + grid.width_ms, end), x});
      break;
  }
  return out;
}

std::string TimeWindow::label() const { return "[" + fmt_ms(start_ms) + "," + fmt_ms(end_ms) + ")"; }

SweepResult sweep_time(const EvalSetup& setup, const EEGEpochSet& test, TimeSweep mode,
                       const TimeGrid& grid) {
  std::vector<PointJob> jobs;
  jobs.push_back({"baseline", kNaN, [&] { return evaluate_point(setup, test); }});
  for (const auto& w : time_windows(test.duration_ms(), mode, grid)) {
    jobs.push_back({w.label(), w.value, [&setup, &test, w] {
                      return evaluate_point(setup, mask_time_window(test, w.start_ms, w.end_ms));
                    }});
  }
  auto r = run_points("time_" + to_string(mode) + "_ms", std::move(jobs), setup.record_dir);
  put_model_meta(r, setup.model, setup.averaging);
  r.meta["step_ms"] = fmt_ms(grid.step_ms);
  if (mode == TimeSweep::Segment) r.meta["width_ms"] = fmt_ms(grid.width_ms);
  r.meta["retrained_per_point"] = "false";
  return r;
}

SweepResult sweep_time_retrained(const ModelFactory& factory, const EEGEpochSet& train,
                                 const EEGEpochSet& test, const TemplateBank& tb, TimeSweep mode,
                                 const TimeGrid& grid, TestAveraging averaging,
                                 const std::filesystem::path& record_dir) {
  std::vector<PointJob> jobs;
  for (const auto& w : time_windows(test.duration_ms(), mode, grid)) {
    jobs.push_back({w.label(), w.value, [&, w] {
                      EvalSetup s{factory(mask_time_window(train, w.start_ms, w.end_ms)), tb,
                                  averaging, {}};
                      return evaluate_point(s, mask_time_window(test, w.start_ms, w.end_ms));
                    }});
  }
  auto r = run_points("time_" + to_string(mode) + "_ms", std::move(jobs), record_dir);
  r.meta["step_ms"] = fmt_ms(grid.step_ms);
  if (mode == TimeSweep::Segment) r.meta["width_ms"] = fmt_ms(grid.width_ms);
  r.meta["retrained_per_point"] = "true";
  r.meta["test_averaging"] = to_string(averaging);
  return r;
}

SweepResult sweep_regions(const EvalSetup& setup, const EEGEpochSet& test,
                          const RegionMap& overrides, const std::vector<std::string>& regions) {
  std::vector<PointJob> jobs;
  jobs.push_back({"baseline", kNaN, [&] { return evaluate_point(setup, test); }});
  for (const auto& region : regions) {
    auto channels = region_channels(test, region, overrides);
    if (channels.empty()) continue;
    jobs.push_back({region, kNaN, [&setup, &test, channels] {
                      return evaluate_point(setup, ablate_channels(test, channels));
                    }});
  }
  std::vector<Index> all(static_cast<std::size_t>(test.channels));
  std::iota(all.begin(), all.end(), Index(0));
  jobs.push_back({"all", kNaN, [&setup, &test, all] {
                    return evaluate_point(setup, ablate_channels(test, all));
                  }});
  auto r = run_points("region", std::move(jobs), setup.record_dir);
  put_model_meta(r, setup.model, setup.averaging);
  return r;
}

std::vector<Index> default_repetition_grid() {
  std::vector<Index> out;
  for (Index r = 5; r <= 80; r += 5) out.push_back(r);
  return out;
}

SweepResult sweep_test_repetitions(const EvalSetup& setup, const EEGEpochSet& test,
                                   const std::vector<Index>& reps) {
  std::vector<PointJob> jobs;
  for (Index n : reps) {
    jobs.push_back({std::to_string(n), double(n), [&setup, &test, n] {
                      EvalSetup s = setup;
                      s.averaging = TestAveraging::Signal;
                      return evaluate_point(s, average_repetitions(test, n));
                    }});
  }
  auto r = run_points("test_repetitions", std::move(jobs), setup.record_dir);
  put_model_meta(r, setup.model, TestAveraging::Signal);
  return r;
}

// ---------------------------------------------------------------------------

ModelFactory make_trainer(std::shared_ptr<const FeatureBank> bank, HyperParams hp,
                          TrainConfig cfg) {
  return [bank = std::move(bank), hp, cfg](const EEGEpochSet& train_eeg) {
    auto eeg = std::make_shared<const EEGEpochSet>(train_eeg);
    auto pairs = make_pairs(eeg, bank);
    auto [tr, val] = split_train_val(pairs, cfg.n_val, cfg.seed);
    HyperParams h = hp;
    h.channels = train_eeg.channels;
    h.samples = train_eeg.samples;
    h.feature_dim = bank->dim();
    auto result = train(tr, val, h, cfg);
    return Checkpoint{h, std::move(result.best)};
  };
}

SweepResult sweep_bands(const ModelFactory& factory, const EEGEpochSet& train,
                        const EEGEpochSet& test, const TemplateBank& tb,
                        const std::vector<BandSpec>& bands, TestAveraging averaging,
                        const std::filesystem::path& record_dir) {
  std::vector<PointJob> jobs;
  for (const auto& band : bands) {
    jobs.push_back({band.name, kNaN, [&, band] {
                      EvalSetup s{factory(bandpass(train, band)), tb, averaging, {}};
                      return evaluate_point(s, bandpass(test, band));
                    }});
  }
  auto r = run_points("band", std::move(jobs), record_dir);
  r.meta["retrained_per_point"] = "true";
  r.meta["test_averaging"] = to_string(averaging);
  for (const auto& band : bands)
    r.meta["band." + band.name] = "[" + fmt_ms(band.lo) + "," + fmt_ms(band.hi) + ") Hz";
  return r;
}

std::string to_string(SizeAxis axis) {
  return axis == SizeAxis::Conditions ? "conditions" : "repetitions";
}

SizeAxis parse_size_axis(std::string_view name) {
  if (name == "conditions") return SizeAxis::Conditions;
  if (name == "repetitions") return SizeAxis::Repetitions;
  throw ArgumentError("size axis must be conditions or repetitions, got \"" + std::string(name) +
                      "\"");
}

EEGEpochSet subsample(const EEGEpochSet& x, double fraction, SizeAxis axis, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ArgumentError("subsample fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  // Distinct keys in first-appearance order, shuffled, first ceil(f * n) kept.
  std::vector<std::string> keys;
  std::unordered_map<std::string, bool> seen;
  auto key_of = [&](Index i) {
    const auto u = static_cast<std::size_t>(i);
    return axis == SizeAxis::Conditions ? x.stimulus_ids[u] : std::to_string(x.repetition_index[u]);
  };
  for (Index i = 0; i < x.trials(); ++i) {
    auto k = key_of(i);
    if (seen.emplace(k, false).second) keys.push_back(k);
  }
  if (axis == SizeAxis::Repetitions) {
    std::sort(keys.begin(), keys.end(),
              [](const std::string& a, const std::string& b) { return std::stoll(a) < std::stoll(b); });
  }
  std::mt19937_64 rng(seed);
  std::shuffle(keys.begin(), keys.end(), rng);
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * double(keys.size()) - 1e-9));
  for (std::size_t i = 0; i < keep; ++i) seen[keys[i]] = true;
  std::vector<Index> rows;
  for (Index i = 0; i < x.trials(); ++i)
    if (seen[key_of(i)]) rows.push_back(i);
  return subset(x, rows);
}

SweepResult sweep_training_size(const ModelFactory& factory, const EEGEpochSet& train,
                                const EEGEpochSet& test, const TemplateBank& tb,
                                const std::vector<double>& fractions, SizeAxis axis,
                                std::uint64_t seed, TestAveraging averaging,
                                const std::filesystem::path& record_dir) {
  std::vector<PointJob> jobs;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw ArgumentError("training fraction must lie in (0, 1], got " + std::to_string(f));
    }
    jobs.push_back({fmt_ms(f), f, [&, f] {
                      EvalSetup s{factory(subsample(train, f, axis, seed)), tb, averaging, {}};
                      return evaluate_point(s, test);
                    }});
  }
  auto r = run_points("train_" + to_string(axis), std::move(jobs), record_dir);
  r.meta["seed"] = std::to_string(seed);
  r.meta["test_averaging"] = to_string(averaging);
  return r;
}

// ---------------------------------------------------------------------------

RDM rdm_from_features(const Matrix<double>& features, const std::vector<std::string>& concepts,
                      const TemplateBank& tb,
                      const std::map<std::string, std::string>& category_map) {
  if (features.rows() != static_cast<Index>(concepts.size())) {
    throw DimensionError("rdm: " + std::to_string(features.rows()) + " feature rows for " +
                         std::to_string(concepts.size()) + " concept labels");
  }
  if (features.cols() != tb.dim()) {
    throw DimensionError("rdm: feature dim " + std::to_string(features.cols()) +
                         " differs from template dim " + std::to_string(tb.dim()));
  }
  // Mean feature per concept.
  const auto order = unique_concepts(concepts);
  std::unordered_map<std::string, Index> slot;
  for (std::size_t i = 0; i < order.size(); ++i) slot[order[i]] = static_cast<Index>(i);
  Matrix<double> mean = Matrix<double>::Zero(static_cast<Index>(order.size()), features.cols());
  Vector<double> count = Vector<double>::Zero(mean.rows());
  for (Index i = 0; i < features.rows(); ++i) {
    const Index s = slot[concepts[static_cast<std::size_t>(i)]];
    mean.row(s) += features.row(i);
    count[s] += 1.0;
  }
  for (Index s = 0; s < mean.rows(); ++s) mean.row(s) /= count[s];

  // Category blocks, stable within a block.
  std::vector<std::string> missing;
  std::vector<std::pair<std::size_t, std::size_t>> keyed;  // (category rank, concept slot)
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto it = category_map.find(order[i]);
    if (it == category_map.end()) {
      missing.push_back(order[i]);
      continue;
    }
    auto rank = std::find(kCategories.begin(), kCategories.end(), it->second);
    if (rank == kCategories.end()) {
      throw MappingError("rdm: concept \"" + order[i] + "\" has unknown category \"" +
                         it->second + "\"");
    }
    keyed.emplace_back(static_cast<std::size_t>(rank - kCategories.begin()), i);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    throw MappingError("rdm: " + std::to_string(missing.size()) +
                       " concepts have no category: " + list);
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  RDM out;
  const auto n = static_cast<Index>(keyed.size());
  Matrix<double> eeg(n, features.cols());
  Matrix<double> tpl(n, features.cols());
  for (Index r = 0; r < n; ++r) {
    const auto& [cat, s] = keyed[static_cast<std::size_t>(r)];
    out.concepts.push_back(order[s]);
    out.categories.push_back(kCategories[cat]);
    const double norm = mean.row(static_cast<Index>(s)).norm();
    if (norm > 0.0) {
      eeg.row(r) = mean.row(static_cast<Index>(s)) / norm;
    } else {
      eeg.row(r).setZero();
    }
    tpl.row(r) = tb.templates.row(tb.index_of(order[s]));
  }
  out.matrix = (eeg * tpl.transpose()).cwiseMax(-1.0).cwiseMin(1.0);
  return out;
}

RDM rdm(const Checkpoint& model, const EEGEpochSet& test, const TemplateBank& tb,
        const std::map<std::string, std::string>& category_map) {
  const auto enc = encode_test_set(model.params, model.hyper, test, TestAveraging::Signal);
  return rdm_from_features(enc.features, enc.concepts, tb, category_map);
}

void write_rdm_csv(std::ostream& out, const RDM& r) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < r.concepts.size(); ++i)
    labels.push_back(r.categories[i] + ":" + r.concepts[i]);
  write_matrix_csv(out, r.matrix, labels, labels);
}

// ---------------------------------------------------------------------------

std::vector<double> default_frequencies() {
  std::vector<double> out;
  for (int f = 2; f <= 100; f += 2) out.push_back(f);
  return out;
}

Matrix<double> time_frequency(const EEGEpochSet& x, const std::vector<Index>& channels,
                              const std::vector<double>& freqs) {
  if (channels.empty()) throw ArgumentError("time_frequency: empty channel selection");
  if (freqs.empty()) throw ArgumentError("time_frequency: empty frequency grid");
  for (Index c : channels) {
    if (c < 0 || c >= x.channels) {
      throw ArgumentError("time_frequency: channel " + std::to_string(c) + " out of range");
    }
  }
  const double nyquist = x.sample_rate / 2.0;
  for (double f : freqs) {
    if (!(f > 0.0 && f <= nyquist)) {
      throw ArgumentError("time_frequency: frequency " + std::to_string(f) +
                          " Hz outside (0, " + std::to_string(nyquist) + "]");
    }
  }
  const Index t_len = x.samples;
  // Wavelets truncated at +-3.5 sigma, and never wider than the epoch on either side.
  std::vector<std::vector<std::complex<double>>> wavelets;
  Index half_max = 0;
  for (double f : freqs) {
    const double sigma = kMorletCycles / (2.0 * M_PI * f) * x.sample_rate;  // in samples
    const Index half = std::min<Index>(static_cast<Index>(std::ceil(3.5 * sigma)), t_len);
    std::vector<std::complex<double>> w(static_cast<std::size_t>(2 * half + 1));
    double mass = 0.0;
    for (Index k = -half; k <= half; ++k) {
      const double env = std::exp(-0.5 * double(k * k) / (sigma * sigma));
      const double phase = 2.0 * M_PI * f * double(k) / x.sample_rate;
      w[static_cast<std::size_t>(k + half)] = env * std::polar(1.0, phase);
      mass += env;
    }
    // Unit-amplitude tone -> |response| = 1/2, power 1/4.
    for (auto& v : w) v /= mass;
    wavelets.push_back(std::move(w));
    half_max = std::max(half_max, half);
  }
  Index n_fft = 1;
  while (n_fft < t_len + 2 * half_max + 1) n_fft *= 2;

  Eigen::FFT<double> fft;
  std::vector<Eigen::VectorXcd> wavelet_spec;
  for (const auto& w : wavelets) {
    Eigen::VectorXcd padded = Eigen::VectorXcd::Zero(n_fft);
    const Index half = static_cast<Index>(w.size() / 2);
    // Centered kernel: index k lands at (k mod n_fft).
    for (Index k = -half; k <= half; ++k)
      padded[(k + n_fft) % n_fft] = w[static_cast<std::size_t>(k + half)];
    Eigen::VectorXcd spec;
    fft.fwd(spec, padded);
    wavelet_spec.push_back(std::move(spec));
  }

  Matrix<double> power = Matrix<double>::Zero(static_cast<Index>(freqs.size()), t_len);
  Eigen::VectorXcd sig(n_fft), sig_spec, prod(n_fft), back;
  for (Index i = 0; i < x.trials(); ++i) {
    const auto trial = x.trial(i);
    for (Index c : channels) {
      sig.setZero();
      for (Index t = 0; t < t_len; ++t) sig[t] = double(trial(c, t));
      fft.fwd(sig_spec, sig);
      for (std::size_t f = 0; f < freqs.size(); ++f) {
        prod = sig_spec.cwiseProduct(wavelet_spec[f]);
        fft.inv(back, prod);
        power.row(static_cast<Index>(f)) += back.head(t_len).cwiseAbs2().transpose();
      }
    }
  }
  const double n = double(x.trials()) * double(channels.size());
  if (n > 0.0) power /= n;
  return power;
}

// ---------------------------------------------------------------------------

Vector<double> grad_cam_spatial(const Checkpoint& model, const EEGEpochSet& x,
                                const TemplateBank& tb) {
  const auto& hp = model.hyper;
  const auto& p = model.params;
  if (p.module_kind() == SpatialModule::None) {
    throw UnsupportedError("grad_cam_spatial: model has no spatial attention module");
  }
  if (x.trials() == 0) throw ArgumentError("grad_cam_spatial: no trials");
  if (tb.dim() != hp.feature_dim) {
    throw DimensionError("grad_cam_spatial: template dim " + std::to_string(tb.dim()) +
                         " differs from feature dim " + std::to_string(hp.feature_dim));
  }
  Matrix<double> cam = Matrix<double>::Zero(x.trials(), x.channels);
  constexpr Index kChunk = 64;
  for (Index start = 0; start < x.trials(); start += kChunk) {
    const Index n = std::min(kChunk, x.trials() - start);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), start);
    const Tensor4<float> input = to_tensor(x, rows);
    EncoderCache<float> cache;
    const Matrix<float> feats = encode(p, hp, input, Mode::Eval, &cache);

    // score = <f, t> / |f| with t unit; d score / d f = (t - score * f / |f|) / |f|.
    Matrix<float> d_out = Matrix<float>::Zero(n, feats.cols());
    for (Index i = 0; i < n; ++i) {
      const Vector<double> f = feats.row(i).transpose().cast<double>();
      const double norm = f.norm();
      if (norm == 0.0) continue;
      const Vector<double> t =
          tb.templates.row(tb.index_of(x.concept_ids[static_cast<std::size_t>(start + i)])).transpose();
      const double score = f.dot(t) / norm;
      d_out.row(i) = ((t - score * f / norm) / norm).cast<float>().transpose();
    }
    const auto grad = encode_backward(p, hp, cache, d_out, true);
    for (Index i = 0; i < n; ++i) {
      const auto act = cache.module_out.sample(i);
      const auto g = grad.d_module_out.sample(i);
      cam.row(start + i) = (act.array() * g.array())
                               .cwiseMax(0.0f)
                               .rowwise()
                               .mean()
                               .cast<double>()
                               .transpose();
    }
  }
  Vector<double> weights = cam.colwise().mean().transpose();
  const double peak = weights.maxCoeff();
  if (peak > 0.0) weights /= peak;
  return weights;
}

void write_matrix_csv(std::ostream& out, const Matrix<double>& m,
                      const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels) {
  const bool rl = !row_labels.empty();
  out << std::setprecision(10);
  if (!col_labels.empty()) {
    if (rl) out << "label";
    for (std::size_t j = 0; j < col_labels.size(); ++j) out << ((rl || j) ? "," : "") << col_labels[j];
    out << '\n';
  }
  for (Index i = 0; i < m.rows(); ++i) {
    if (rl) out << row_labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < m.cols(); ++j) out << ((rl || j) ? "," : "") << m(i, j);
    out << '\n';
  }
}

std::string params_digest(const EncoderParams<float>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t bytes) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for_each_tensor(params, [&](std::string_view name, std::span<const float> v, Index, Index, bool) {
    mix(name.data(), name.size());
    mix(v.data(), v.size_bytes());
  });
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

}  // namespace nicekit
