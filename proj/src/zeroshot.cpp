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

#include "nice/zeroshot.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "nice/preprocess.hpp"

namespace nicekit {

Index TemplateBank::index_of(std::string_view concept_id) const {
  auto it = std::find(concept_ids.begin(), concept_ids.end(), concept_id);
  if (it == concept_ids.end()) {
    throw CoverageError("no template for concept \"" + std::string(concept_id) + "\"");
  }
  return static_cast<Index>(it - concept_ids.begin());
}

std::vector<std::string> unique_concepts(const std::vector<std::string>& ids) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (seen.insert(id).second) out.push_back(id);
  }
  return out;
}

TemplateBank build_templates(const FeatureBank& bank, const std::vector<std::string>& concepts,
                             std::span<const std::string> stimulus_ids) {
  if (!stimulus_ids.empty()) {
    const std::unordered_set<std::string> stimuli(stimulus_ids.begin(), stimulus_ids.end());
    std::vector<std::string> leaked;
    for (const auto& id : bank.image_ids()) {
      if (stimuli.count(id)) leaked.push_back(id);
    }
    if (!leaked.empty()) {
      std::string list;
      for (std::size_t i = 0; i < leaked.size() && i < 5; ++i) list += (i ? ", " : "") + leaked[i];
      throw LeakageError(std::to_string(leaked.size()) +
                         " template image(s) were shown as EEG stimuli: " + list);
    }
  }
  std::set<std::string> distinct(concepts.begin(), concepts.end());
  if (distinct.size() != concepts.size()) throw ArgumentError("template concepts must be unique");

  TemplateBank tb;
  tb.templates.resize(static_cast<Index>(concepts.size()), bank.dim());
  tb.concept_ids = concepts;
  std::vector<std::string> missing;
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    const auto rows = bank.rows_of_concept(concepts[c]);
    if (rows.empty()) {
      missing.push_back(concepts[c]);
      continue;
    }
    Vector<double> sum = Vector<double>::Zero(bank.dim());
    for (Index r : rows) {
      Vector<double> f = bank.features().row(r).cast<double>().transpose();
      sum += f / f.norm();
    }
    const double norm = sum.norm();
    if (!(norm > 0.0)) {
      throw NormalizationError("template of concept \"" + concepts[c] + "\" averages to zero");
    }
    tb.templates.row(static_cast<Index>(c)) = (sum / norm).transpose();
    tb.image_counts.push_back(static_cast<Index>(rows.size()));
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 5; ++i) list += (i ? ", " : "") + missing[i];
    throw CoverageError(std::to_string(missing.size()) + " concept(s) have no template images: " +
                        list);
  }
  return tb;
}

SimilarityReport classify(const Matrix<double>& features, const TemplateBank& tb,
                          const std::vector<std::string>& true_concepts,
                          const std::vector<Index>& ks) {
  if (features.cols() != tb.dim()) {
    throw DimensionError("classify: feature dim " + std::to_string(features.cols()) +
                         " != template dim " + std::to_string(tb.dim()));
  }
  if (static_cast<Index>(true_concepts.size()) != features.rows()) {
    throw DimensionError("classify: " + std::to_string(true_concepts.size()) + " labels for " +
                         std::to_string(features.rows()) + " trials");
  }
  for (Index k : ks) {
    if (k < 1 || k > tb.size()) {
      throw ArgumentError("top-k with k = " + std::to_string(k) + " outside [1, " +
                          std::to_string(tb.size()) + "]");
    }
  }
  const Index n = features.rows();
  const Index m = tb.size();
  std::unordered_map<std::string, Index> lookup;
  for (Index j = 0; j < m; ++j) lookup.emplace(tb.concept_ids[static_cast<std::size_t>(j)], j);

  SimilarityReport rep;
  Vector<double> norms = features.rowwise().norm();
  Vector<double> inv = norms.unaryExpr([](double v) { return v > 0.0 ? 1.0 / v : 0.0; });
  rep.similarity = (inv.asDiagonal() * features) * tb.templates.transpose();
  rep.similarity = rep.similarity.cwiseMax(-1.0).cwiseMin(1.0);
  rep.ranking.resize(n, m);
  rep.truth.resize(static_cast<std::size_t>(n));
  rep.true_rank.resize(static_cast<std::size_t>(n));
  for (Index k : ks) rep.topk_hits[k].assign(static_cast<std::size_t>(n), false);

  std::vector<Index> order(static_cast<std::size_t>(m));
  for (Index i = 0; i < n; ++i) {
    auto it = lookup.find(true_concepts[static_cast<std::size_t>(i)]);
    if (it == lookup.end()) {
      throw CoverageError("trial " + std::to_string(i) + " has concept \"" +
                          true_concepts[static_cast<std::size_t>(i)] + "\" with no template");
    }
    std::iota(order.begin(), order.end(), Index{0});
    const auto row = rep.similarity.row(i);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return row[a] > row[b]; });
    Index rank = 0;
    for (Index r = 0; r < m; ++r) {
      rep.ranking(i, r) = order[static_cast<std::size_t>(r)];
      if (order[static_cast<std::size_t>(r)] == it->second) rank = r;
    }
    rep.truth[static_cast<std::size_t>(i)] = it->second;
    rep.true_rank[static_cast<std::size_t>(i)] = rank;
    for (auto& [k, hits] : rep.topk_hits) hits[static_cast<std::size_t>(i)] = rank < k;
  }
  return rep;
}

double topk_accuracy(const SimilarityReport& report, Index k) {
  auto it = report.topk_hits.find(k);
  if (it == report.topk_hits.end()) {
    throw ArgumentError("top-" + std::to_string(k) + " was not evaluated");
  }
  if (it->second.empty()) return 0.0;
  const auto hits = std::count(it->second.begin(), it->second.end(), true);
  return double(hits) / double(it->second.size());
}

void write_report_json(std::ostream& out, const SimilarityReport& report, const TemplateBank& tb,
                       const std::vector<std::string>& trial_ids) {
  using json = nlohmann::json;
  json accuracy = json::object();
  for (const auto& [k, hits] : report.topk_hits) {
    accuracy["top" + std::to_string(k)] = topk_accuracy(report, k);
  }
  json trials = json::array();
  const Index shown = std::min<Index>(10, tb.size());
  for (Index i = 0; i < report.trials(); ++i) {
    json ranked = json::array();
    for (Index r = 0; r < shown; ++r) {
      const Index j = report.ranking(i, r);
      ranked.push_back({{"concept", tb.concept_ids[static_cast<std::size_t>(j)]},
                        {"similarity", report.similarity(i, j)}});
    }
    json t = {{"truth", tb.concept_ids[static_cast<std::size_t>(report.truth[static_cast<std::size_t>(i)])]},
              {"rank", report.true_rank[static_cast<std::size_t>(i)] + 1},
              {"top", ranked}};
    if (static_cast<Index>(trial_ids.size()) == report.trials()) {
      t["id"] = trial_ids[static_cast<std::size_t>(i)];
    }
    trials.push_back(std::move(t));
  }
  json doc = {{"n_trials", report.trials()},
              {"n_concepts", tb.size()},
              {"accuracy", accuracy},
              {"trials", trials}};
  out << doc.dump(1) << '\n';
}

void write_summary_csv(std::ostream& out, const SimilarityReport& report) {
  out << "k,accuracy,n_trials\n";
  for (const auto& [k, hits] : report.topk_hits) {
    out << k << ',' << topk_accuracy(report, k) << ',' << hits.size() << '\n';
  }
}

std::string to_string(TestAveraging mode) {
  switch (mode) {
    case TestAveraging::Feature:
      return "feature";
    case TestAveraging::None:
      return "none";
    case TestAveraging::Signal:
      break;
  }
  return "signal";
}

TestAveraging parse_test_averaging(std::string_view name) {
  if (name == "signal") return TestAveraging::Signal;
  if (name == "feature") return TestAveraging::Feature;
  if (name == "none") return TestAveraging::None;
  throw ArgumentError("test averaging must be one of signal|feature|none, got \"" +
                      std::string(name) + "\"");
}

EncodedTestSet encode_test_set(const EncoderParams<float>& params, const HyperParams& hp,
                               const EEGEpochSet& test, TestAveraging mode) {
  EncodedTestSet out;
  if (mode == TestAveraging::Signal) {
    const EEGEpochSet avg = average_repetitions(test);
    out.features = encode_chunked(params, hp, to_tensor(avg)).cast<double>();
    out.concepts = avg.concept_ids;
    out.stimuli = avg.stimulus_ids;
    return out;
  }
  Matrix<double> all = encode_chunked(params, hp, to_tensor(test)).cast<double>();
  if (mode == TestAveraging::None) {
    out.features = std::move(all);
    out.concepts = test.concept_ids;
    out.stimuli = test.stimulus_ids;
    return out;
  }
  std::unordered_map<std::string, Index> slot;
  std::vector<Index> counts;
  std::vector<Index> row_slot(static_cast<std::size_t>(test.trials()));
  for (Index i = 0; i < test.trials(); ++i) {
    const auto& sid = test.stimulus_ids[static_cast<std::size_t>(i)];
    auto [it, fresh] = slot.emplace(sid, static_cast<Index>(out.stimuli.size()));
    if (fresh) {
      out.stimuli.push_back(sid);
      out.concepts.push_back(test.concept_ids[static_cast<std::size_t>(i)]);
      counts.push_back(0);
    }
    row_slot[static_cast<std::size_t>(i)] = it->second;
    ++counts[static_cast<std::size_t>(it->second)];
  }
  out.features = Matrix<double>::Zero(static_cast<Index>(out.stimuli.size()), all.cols());
  for (Index i = 0; i < test.trials(); ++i) out.features.row(row_slot[static_cast<std::size_t>(i)]) += all.row(i);
  for (Index s = 0; s < out.features.rows(); ++s) out.features.row(s) /= double(counts[static_cast<std::size_t>(s)]);
  return out;
}

SimilarityReport evaluate_zero_shot(const EncoderParams<float>& params, const HyperParams& hp,
                                    const EEGEpochSet& test, const TemplateBank& tb,
                                    const std::vector<Index>& ks, TestAveraging mode) {
  const auto enc = encode_test_set(params, hp, test, mode);
  return classify(enc.features, tb, enc.concepts, ks);
}

}  // namespace nicekit
