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

#include "nice/contrastive.hpp"

#include <chrono>
#include <ostream>
#include <random>

#include <nlohmann/json.hpp>

namespace nicekit {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ArgumentError("batch_size must be >= 2");
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ArgumentError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ArgumentError("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ArgumentError("eps must be positive");
  if (n_val < 0) throw ArgumentError("n_val must be >= 0");
  if (max_temperature && !(*max_temperature > 0.0)) {
    throw ArgumentError("max_temperature must be positive");
  }
}

namespace {

Tensor4<float> gather(const Tensor4<float>& x, const std::vector<Index>& rows) {
  Tensor4<float> out(static_cast<Index>(rows.size()), 1, x.rows(), x.cols());
  const Index plane = x.rows() * x.cols();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.flat().segment(static_cast<Index>(i) * plane, plane) =
        x.flat().segment(rows[i] * plane, plane);
  }
  return out;
}

Matrix<float> gather_rows(const Matrix<float>& m, const std::vector<Index>& rows) {
  Matrix<float> out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

void check_dataset(const PairedDataset& ds, const HyperParams& hp, const char* which) {
  if (ds.bank->dim() != hp.feature_dim) {
    throw DimensionError(std::string(which) + " features have D = " +
                         std::to_string(ds.bank->dim()) + ", encoder projects to " +
                         std::to_string(hp.feature_dim));
  }
  if (ds.eeg->channels != hp.channels || ds.eeg->samples != hp.samples) {
    throw DimensionError(std::string(which) + " epochs are (" + std::to_string(ds.eeg->channels) +
                         ", " + std::to_string(ds.eeg->samples) + "), encoder expects (" +
                         std::to_string(hp.channels) + ", " + std::to_string(hp.samples) + ")");
  }
}

}  // namespace

double evaluate_loss(const EncoderParams<float>& params, const HyperParams& hp,
                     const PairedDataset& ds) {
  if (ds.size() < 2) throw ArgumentError("contrastive loss needs at least 2 pairs");
  Matrix<float> eeg = normalize_rows(encode_chunked(params, hp, ds.trials()));
  Matrix<float> img = normalize_rows(ds.features());
  return double(info_nce(eeg, img, params.log_temperature).loss);
}

TrainResult train(const PairedDataset& train_ds, const PairedDataset& val_ds,
                  const HyperParams& hp, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  hp.validate();
  check_dataset(train_ds, hp, "training");
  check_dataset(val_ds, hp, "validation");
  if (train_ds.size() < 2) throw ArgumentError("training needs at least 2 pairs");

  const Tensor4<float> x_all = train_ds.trials();
  const Matrix<float> y_all = normalize_rows(train_ds.features());

  EncoderParams<float> params = init_params<float>(hp, cfg.seed);
  TrainState state;
  state.adam = adam_init(params);
  state.best_params = params;

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<Index> order(static_cast<std::size_t>(train_ds.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  const double log_cap = cfg.max_temperature ? std::log(*cfg.max_temperature) : 0.0;

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(shuffle_rng)]);
    }
    double loss_sum = 0.0;
    Index seen = 0;
    for (Index start = 0; start < train_ds.size(); start += cfg.batch_size) {
      const Index size = std::min(cfg.batch_size, train_ds.size() - start);
      if (size < 2) continue;  // a single pair carries no contrast
      std::vector<Index> rows(order.begin() + start, order.begin() + start + size);
      const Tensor4<float> xb = gather(x_all, rows);
      const Matrix<float> yb = gather_rows(y_all, rows);

      EncoderCache<float> cache;
      const Matrix<float> feats = encode(params, hp, xb, Mode::Train, &cache);
      if (!feats.allFinite() || !(feats.rowwise().norm().minCoeff() > 0.0f)) {
        throw TrainingDiverged("degenerate EEG embeddings at epoch " + std::to_string(epoch),
                               state.best_params);
      }
      const Matrix<float> eeg = normalize_rows(feats);
      const auto nce = info_nce(eeg, yb, params.log_temperature);
      if (!std::isfinite(double(nce.loss))) {
        throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch),
                               state.best_params);
      }
      const auto d = info_nce_backward(nce, yb, params.log_temperature);
      const Matrix<float> d_feats = normalize_rows_backward(feats, eeg, d.d_eeg);
      EncoderGrad<float> grad = encode_backward(params, hp, cache, d_feats);
      grad.params.log_temperature = d.d_log_temperature;

      adam_step(params, grad.params, state.adam, cfg);
      if (cfg.max_temperature) params.log_temperature = std::min<float>(params.log_temperature, float(log_cap));
      update_running_stats(params.bn1, cache.block1.bn);
      update_running_stats(params.bn2, cache.bn2);

      loss_sum += double(nce.loss) * double(size);
      seen += size;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = seen > 0 ? loss_sum / double(seen) : 0.0;
    try {
      rec.val_loss = evaluate_loss(params, hp, val_ds);
    } catch (const NormalizationError& e) {
      throw TrainingDiverged(std::string("validation embeddings collapsed: ") + e.what(),
                             state.best_params);
    }
    rec.temperature = double(params.temperature());
    if (!std::isfinite(rec.val_loss)) {
      throw TrainingDiverged("non-finite validation loss at epoch " + std::to_string(epoch),
                             state.best_params);
    }
    if (rec.val_loss < state.best_val_loss) {
      state.best_val_loss = rec.val_loss;
      state.best_epoch = epoch;
      state.best_params = params;
    }
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    state.epoch = epoch + 1;
    state.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  TrainResult result;
  result.best = state.best_params;
  result.state = std::move(state);
  return result;
}

void write_epoch_json(std::ostream& out, const EpochRecord& record) {
  nlohmann::json line = {{"epoch", record.epoch},
                         {"train_loss", record.train_loss},
                         {"val_loss", record.val_loss},
                         {"exp_t", record.temperature},
                         {"seconds", record.seconds}};
  out << line.dump() << "\n";
}

}  // namespace nicekit
