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

#ifndef NICE_GRADCHECK_HPP
#define NICE_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nice/error.hpp"
#include "nice/tensor.hpp"

namespace nicekit {

struct GradCheckOptions {
  double step = 1e-5;      // scaled by max(1, |x|)
  Index points = 10;       // sampled coordinates per tensor (all if smaller)
  double abs_floor = 1e-7; // denominator floor for the relative error
  std::uint64_t seed = 7;
  // Reject a sampled coordinate when the one-sided differences disagree,
  // i.e. the step straddles a kink.  A replacement coordinate is drawn.
  bool skip_kinks = true;
  std::function<bool(std::string_view tensor, Index index)> exclude;
};

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  Index worst_index = -1;
  Index points = 0;
  Index skipped = 0;
};

struct GradCheckReport {
  std::string layer;
  std::vector<TensorCheck> tensors;

  double max_rel_error() const {
    double worst = 0.0;
    for (const auto& t : tensors) worst = std::max(worst, t.max_rel_error);
    return worst;
  }
  Index min_points() const {
    Index least = tensors.empty() ? 0 : tensors.front().points;
    for (const auto& t : tensors) least = std::min(least, t.points);
    return least;
  }
  Index total_points() const {
    Index total = 0;
    for (const auto& t : tensors) total += t.points;
    return total;
  }
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

// A tensor whose entries are perturbed in place, paired with its analytic gradient.
struct CheckedTensor {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares analytic gradients of the scalar `loss` against central
// differences.  `loss` must read the current contents of every checked span.
template <typename Loss>
GradCheckReport check_gradients(std::string layer, Loss&& loss, std::vector<CheckedTensor> tensors,
                                const GradCheckOptions& options = {}) {
  GradCheckReport report;
  report.layer = std::move(layer);
  std::mt19937_64 rng(options.seed);
  for (auto& tensor : tensors) {
    if (tensor.values.size() != tensor.analytic.size()) {
      throw DimensionError(report.layer + "/" + tensor.name + ": gradient size " +
                           std::to_string(tensor.analytic.size()) + " != parameter size " +
                           std::to_string(tensor.values.size()));
    }
    for (std::size_t i = 0; i < tensor.analytic.size(); ++i) {
      if (!std::isfinite(tensor.analytic[i])) {
        throw NumericalError("non-finite analytic gradient at " + report.layer + "/" +
                             tensor.name + "[" + std::to_string(i) + "]");
      }
    }
    TensorCheck check;
    check.name = tensor.name;
    const Index size = static_cast<Index>(tensor.values.size());
    std::vector<Index> order(static_cast<std::size_t>(size));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);

    for (Index idx : order) {
      if (check.points >= options.points) break;
      if (options.exclude && options.exclude(tensor.name, idx)) {
        ++check.skipped;
        continue;
      }
      double& x = tensor.values[static_cast<std::size_t>(idx)];
      const double saved = x;
      const double h = options.step * std::max(1.0, std::abs(saved));
      const double f0 = loss();
      x = saved + h;
      const double f_plus = loss();
      x = saved - h;
      const double f_minus = loss();
      x = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw NumericalError("non-finite loss while perturbing " + report.layer + "/" +
                             tensor.name + "[" + std::to_string(idx) + "]");
      }
      if (options.skip_kinks) {
        const double right = f_plus - f0;
        const double left = f0 - f_minus;
        const double scale = std::max(std::abs(right), std::abs(left));
        if (scale > 1e-12 && std::abs(right - left) > 0.1 * scale) {
          ++check.skipped;
          continue;
        }
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double err =
          relative_error(tensor.analytic[static_cast<std::size_t>(idx)], numeric, options.abs_floor);
      if (err > check.max_rel_error || check.worst_index < 0) {
        check.max_rel_error = std::max(check.max_rel_error, err);
        check.worst_index = idx;
      }
      ++check.points;
    }
    report.tensors.push_back(std::move(check));
  }
  return report;
}

template <typename Derived>
std::span<double> as_span(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Derived>
std::span<const double> as_span(const Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

inline std::span<double> as_span(Tensor4<double>& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}

inline std::span<const double> as_span(const Tensor4<double>& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}

// Runs the finite-difference suite over every layer of the encoder and the
// contrastive loss, on small 64-bit instances.
std::vector<GradCheckReport> run_gradient_suite(std::uint64_t seed = 2024,
                                                const GradCheckOptions& options = {});

}  // namespace nicekit

#endif  // NICE_GRADCHECK_HPP
