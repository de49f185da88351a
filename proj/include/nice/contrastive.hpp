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

#ifndef NICE_CONTRASTIVE_HPP
#define NICE_CONTRASTIVE_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <vector>

#include "nice/data_io.hpp"
#include "nice/encoder.hpp"

namespace nicekit {

// Row-wise L2 normalization.  Throws NormalizationError on a zero row.
template <typename S>
Matrix<S> normalize_rows(const Matrix<S>& f) {
  Vector<S> norms = f.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > S(0))) {
      throw NormalizationError("row " + std::to_string(i) + " has zero norm");
    }
  }
  return norms.cwiseInverse().asDiagonal() * f;
}

// Given the raw rows f, their normalized rows u, and dL/du, returns dL/df.
template <typename S>
Matrix<S> normalize_rows_backward(const Matrix<S>& f, const Matrix<S>& u, const Matrix<S>& d_u) {
  Vector<S> inv_norm = f.rowwise().norm().cwiseInverse();
  Vector<S> radial = (u.array() * d_u.array()).rowwise().sum();
  return inv_norm.asDiagonal() * (d_u - radial.asDiagonal() * u);
}

template <typename S>
struct InfoNceResult {
  S loss = S(0);
  Matrix<S> logits;    // (b, b)
  Matrix<S> d_logits;  // dL/dlogits
};

// Symmetric cross-entropy over logits = E I^T exp(t) with diagonal targets.
// Both inputs must already be row-normalized and aligned pair by pair.
template <typename S>
InfoNceResult<S> info_nce(const Matrix<S>& eeg, const Matrix<S>& image, S log_temperature) {
  if (eeg.rows() != image.rows() || eeg.cols() != image.cols()) {
    throw DimensionError("info_nce: EEG " + std::to_string(eeg.rows()) + "x" +
                         std::to_string(eeg.cols()) + " vs image " + std::to_string(image.rows()) +
                         "x" + std::to_string(image.cols()));
  }
  const Index b = eeg.rows();
  InfoNceResult<S> r;
  r.logits = (eeg * image.transpose()) * std::exp(log_temperature);
  // Row (per-EEG) and column (per-image) softmax, each stabilized by its max.
  Matrix<S> row_prob = softmax_rows<S>(r.logits);
  Matrix<S> col_prob = softmax_rows<S>(r.logits.transpose()).transpose();
  const Vector<S> row_max = r.logits.rowwise().maxCoeff();
  const Vector<S> col_max = r.logits.colwise().maxCoeff().transpose();
  double row_loss = 0.0;
  double col_loss = 0.0;
  for (Index i = 0; i < b; ++i) {
    const double row_lse =
        double(row_max[i]) + std::log((r.logits.row(i).array() - row_max[i]).exp().sum());
    const double col_lse =
        double(col_max[i]) + std::log((r.logits.col(i).array() - col_max[i]).exp().sum());
    row_loss += row_lse - double(r.logits(i, i));
    col_loss += col_lse - double(r.logits(i, i));
  }
  r.loss = S(0.5 * (row_loss + col_loss) / double(b));
  Matrix<S> eye = Matrix<S>::Identity(b, b);
  r.d_logits = ((row_prob - eye) + (col_prob - eye)) * (S(0.5) / S(b));
  return r;
}

template <typename S>
struct InfoNceGrad {
  Matrix<S> d_eeg;  // dL/d(normalized EEG rows)
  S d_log_temperature = S(0);
};

template <typename S>
InfoNceGrad<S> info_nce_backward(const InfoNceResult<S>& r, const Matrix<S>& image,
                                 S log_temperature) {
  InfoNceGrad<S> g;
  const S scale = std::exp(log_temperature);
  g.d_eeg = r.d_logits * image * scale;
  // logits depend on t through exp(t): dlogits/dt = logits.
  g.d_log_temperature = (r.d_logits.array() * r.logits.array()).sum();
  return g;
}

// ---------------------------------------------------------------------------

struct TrainConfig {
  Index batch_size = 1000;
  Index epochs = 200;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  Index n_val = kDefaultValidationTrials;
  std::uint64_t seed = 0;
  std::optional<double> max_temperature = 100.0;  // cap on exp(t); nullopt disables

  void validate() const;
};

template <typename S>
struct AdamState {
  EncoderParams<S> m;
  EncoderParams<S> v;
  std::int64_t step = 0;
};

template <typename S>
AdamState<S> adam_init(const EncoderParams<S>& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

// One bias-corrected Adam update on every learnable tensor.  Running
// statistics are not touched.  Throws NumericalError on a non-finite gradient.
template <typename S>
void adam_step(EncoderParams<S>& params, const EncoderParams<S>& grads, AdamState<S>& state,
               const TrainConfig& cfg) {
  std::vector<std::span<const S>> g_spans;
  for_each_tensor(grads, [&](std::string_view name, std::span<const S> g, Index, Index, bool learn) {
    if (!learn) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(double(g[i]))) {
        throw NumericalError("non-finite gradient in " + std::string(name) + "[" +
                             std::to_string(i) + "]");
      }
    }
    g_spans.push_back(g);
  });
  std::vector<std::span<S>> m_spans, v_spans;
  for_each_tensor(state.m, [&](std::string_view, std::span<S> v, Index, Index, bool learn) {
    if (learn) m_spans.push_back(v);
  });
  for_each_tensor(state.v, [&](std::string_view, std::span<S> v, Index, Index, bool learn) {
    if (learn) v_spans.push_back(v);
  });
  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  std::size_t k = 0;
  for_each_tensor(params, [&](std::string_view, std::span<S> p, Index, Index, bool learn) {
    if (!learn) return;
    auto g = g_spans[k];
    auto m = m_spans[k];
    auto v = v_spans[k];
    if (g.size() != p.size() || m.size() != p.size()) {
      throw DimensionError("adam_step: gradient/moment shape mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = double(g[i]);
      const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = S(mi);
      v[i] = S(vi);
      p[i] = S(double(p[i]) - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
    ++k;
  });
}

struct EpochRecord {
  Index epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double temperature = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  AdamState<float> adam;
  Index epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  Index best_epoch = -1;
  EncoderParams<float> best_params;
  std::vector<EpochRecord> history;
};

struct TrainResult {
  EncoderParams<float> best;
  TrainState state;
};

// Thrown when the loss turns non-finite; carries the last good snapshot.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, EncoderParams<float> last_good)
      : NumericalError(what), last_good_(std::move(last_good)) {}
  const EncoderParams<float>& last_good() const { return last_good_; }

 private:
  EncoderParams<float> last_good_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Contrastive loss of `params` on a whole paired set, eval mode, one pass.
double evaluate_loss(const EncoderParams<float>& params, const HyperParams& hp,
                     const PairedDataset& ds);

// Trains for cfg.epochs and returns the snapshot with the lowest validation
// loss.  Image features are normalized once and stay fixed.
TrainResult train(const PairedDataset& train_ds, const PairedDataset& val_ds,
                  const HyperParams& hp, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// JSON-lines record {epoch, train_loss, val_loss, exp_t, seconds}.
void write_epoch_json(std::ostream& out, const EpochRecord& record);

}  // namespace nicekit

#endif  // NICE_CONTRASTIVE_HPP
