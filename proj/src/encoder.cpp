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

#include "nice/encoder.hpp"

#include <map>

#include <nlohmann/json.hpp>

#include "nice/binary_io.hpp"

namespace nicekit {

using json = nlohmann::json;

std::string to_string(SpatialModule module) {
  switch (module) {
    case SpatialModule::SelfAttention:
      return "sa";
    case SpatialModule::GraphAttention:
      return "ga";
    case SpatialModule::None:
      break;
  }
  return "none";
}

SpatialModule parse_spatial_module(std::string_view name) {
  if (name == "none") return SpatialModule::None;
  if (name == "sa") return SpatialModule::SelfAttention;
  if (name == "ga") return SpatialModule::GraphAttention;
  throw ArgumentError("spatial_module must be one of none|sa|ga, got \"" + std::string(name) + "\"");
}

void HyperParams::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ArgumentError("hyperparameters: " + what);
  };
  need(kernels >= 1 && temporal_kernel >= 1 && pool_kernel >= 1 && pool_stride >= 1,
       "k, m1, m2 and s2 must be >= 1");
  need(channels >= 1 && samples >= 1 && feature_dim >= 1, "C, T and D must be >= 1");
  if (temporal_kernel > samples) {
    throw InvalidKernelError("temporal kernel m1 = " + std::to_string(temporal_kernel) +
                             " exceeds T = " + std::to_string(samples));
  }
  if (pool_kernel > conv_length()) {
    throw InvalidKernelError("pooling kernel m2 = " + std::to_string(pool_kernel) +
                             " exceeds T - m1 + 1 = " + std::to_string(conv_length()));
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

json hyper_to_json(const HyperParams& hp) {
  return {{"k", hp.kernels},          {"m1", hp.temporal_kernel}, {"m2", hp.pool_kernel},
          {"s2", hp.pool_stride},     {"C", hp.channels},         {"T", hp.samples},
          {"D", hp.feature_dim},      {"spatial_module", to_string(hp.spatial)},
          {"ga_residual", hp.ga_residual}};
}

HyperParams hyper_from_json(const json& j) {
  HyperParams hp;
  hp.kernels = j.at("k").get<Index>();
  hp.temporal_kernel = j.at("m1").get<Index>();
  hp.pool_kernel = j.at("m2").get<Index>();
  hp.pool_stride = j.at("s2").get<Index>();
  hp.channels = j.at("C").get<Index>();
  hp.samples = j.at("T").get<Index>();
  hp.feature_dim = j.at("D").get<Index>();
  hp.spatial = parse_spatial_module(j.at("spatial_module").get<std::string>());
  hp.ga_residual = j.value("ga_residual", true);
  return hp;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& params,
                     const HyperParams& hp) {
  check_consistent(params, hp);
  io::Writer w(path);
  w.magic("NICE");
  w.scalar<std::uint32_t>(kCheckpointVersion);
  w.blob(hyper_to_json(hp).dump());
  std::uint64_t count = 0;
  for_each_tensor(params, [&](std::string_view, std::span<const float>, Index, Index, bool) { ++count; });
  w.scalar<std::uint64_t>(count);
  for_each_tensor(params, [&](std::string_view name, std::span<const float> values, Index rows,
                              Index cols, bool) {
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.scalar<std::uint32_t>(2);
    w.scalar<std::uint64_t>(static_cast<std::uint64_t>(rows));
    w.scalar<std::uint64_t>(static_cast<std::uint64_t>(cols));
    w.floats(values.data(), values.size());
  });
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("NICE");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(r.path() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  try {
    ck.hyper = hyper_from_json(json::parse(r.blob()));
  } catch (const json::exception& e) {
    throw CorruptionError(r.path() + ": bad hyperparameter header: " + e.what());
  }
  ck.params = init_params<float>(ck.hyper, 0);

  struct Stored {
    std::uint64_t rows = 0, cols = 0;
    std::vector<float> values;
  };
  std::map<std::string, Stored> tensors;
  const auto count = r.scalar<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.scalar<std::uint32_t>();
    std::string name = r.text(name_len);
    const auto rank = r.scalar<std::uint32_t>();
    if (rank == 0 || rank > 4) throw CorruptionError(r.path() + ": bad tensor rank for " + name);
    std::vector<std::uint64_t> dims(rank);
    for (auto& d : dims) d = r.scalar<std::uint64_t>();
    std::uint64_t n = 1;
    for (auto d : dims) n = io::checked_product({n, d}, r.path());
    Stored s;
    s.rows = dims[0];
    s.cols = n / std::max<std::uint64_t>(dims[0], 1);
    s.values.resize(n);
    r.floats(s.values.data(), n);
    tensors.emplace(std::move(name), std::move(s));
  }
  for_each_tensor(ck.params, [&](std::string_view name, std::span<float> values, Index rows,
                                 Index cols, bool) {
    auto it = tensors.find(std::string(name));
    if (it == tensors.end()) throw CorruptionError(r.path() + ": missing tensor " + std::string(name));
    if (it->second.values.size() != values.size() ||
        it->second.rows != static_cast<std::uint64_t>(rows) ||
        it->second.cols != static_cast<std::uint64_t>(cols)) {
      throw CorruptionError(r.path() + ": tensor " + std::string(name) + " has the wrong shape");
    }
    std::copy(it->second.values.begin(), it->second.values.end(), values.begin());
  });
  return ck;
}

}  // namespace nicekit
