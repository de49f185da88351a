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

// nice: preprocess, train, eval, ablate, rdm, tfr, gradcam, synth, gradcheck.
// Exit status: 0 success, 2 usage, 3 validation, 4 runtime.

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "nice/analysis.hpp"
#include "nice/config.hpp"
#include "nice/contrastive.hpp"
#include "nice/data_io.hpp"
#include "nice/encoder.hpp"
#include "nice/gradcheck.hpp"
#include "nice/preprocess.hpp"
#include "nice/zeroshot.hpp"

namespace {

using json = nlohmann::json;
using namespace nicekit;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitRuntime = 4;

// JSON-lines log, mirrored to stderr.
class Log {
 public:
  void open(const fs::path& path) { file_.open(path, std::ios::app); }

  void event(const std::string& name, json fields = json::object()) {
    fields["event"] = name;
    fields["time"] = now();
    const std::string line = fields.dump();
    if (file_) file_ << line << '\n' << std::flush;
    std::cerr << line << '\n';
  }

 private:
  static std::string now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
  }

  std::ofstream file_;
};

struct Context {
  json merged;
  RunConfig cfg;
  Log log;
};

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw FormatError(path.string() + ": cannot write");
  out << std::setw(2) << doc << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path.string() + ": cannot write");
  return out;
}

fs::path require_file(const fs::path& path, const std::string& field) {
  if (!fs::exists(path)) throw ValidationError(field + ": " + path.string() + " does not exist");
  return path;
}

EEGEpochSet load_train(const Context& ctx) {
  return load_epochs(require_file(ctx.cfg.train_epochs(), "paths.train_epochs"));
}
EEGEpochSet load_test(const Context& ctx) {
  return load_epochs(require_file(ctx.cfg.test_epochs(), "paths.test_epochs"));
}
FeatureBank load_images(const Context& ctx) {
  return load_feature_bank(require_file(ctx.cfg.feature_bank(), "paths.feature_bank"));
}
Checkpoint load_model(const Context& ctx) {
  return load_checkpoint(require_file(ctx.cfg.checkpoint(), "paths.checkpoint"));
}

// Templates for the concepts of `test`, rejecting any template image that is
// also a test stimulus.
TemplateBank test_templates(const Context& ctx, const EEGEpochSet& test) {
  const auto bank = load_feature_bank(require_file(ctx.cfg.template_bank(), "paths.template_bank"));
  return build_templates(bank, unique_concepts(test.concept_ids), test.stimulus_ids);
}

ModelFactory trainer(const Context& ctx, const FeatureBank& images) {
  HyperParams hp = ctx.cfg.hyper;
  auto bank = std::make_shared<const FeatureBank>(images);
  auto fit = make_trainer(bank, hp, ctx.cfg.train);
  const bool average = ctx.cfg.average_train_repetitions;
  return [fit, average](const EEGEpochSet& train) {
    return fit(average ? average_repetitions(train) : train);
  };
}

// ---------------------------------------------------------------------------

void cmd_preprocess(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto& pp = c.preprocess;
  auto run = [&](const EEGEpochSet& raw) {
    EEGEpochSet x = raw;
    if (x.onset_sample > 0 && pp.baseline_ms > 0.0) x = baseline_correct(x, pp.baseline_ms);
    if (x.sample_rate != pp.target_hz) x = downsample(x, pp.target_hz);
    x = crop(x, pp.crop_start_ms, pp.crop_end_ms.value_or(x.duration_ms()));
    return x;
  };
  EEGEpochSet train = run(load_epochs(require_file(c.paths.raw_train_epochs, "paths.raw_train_epochs")));
  ctx.log.event("preprocess.train", {{"trials", train.trials()}, {"samples", train.samples}});
  const WhitenOp op = fit_whitener(train, pp.mvnn_lambda);
  train = apply_whitener(op, train);
  save_epochs(c.train_epochs(), train);
  {
    auto out = open_out(c.out("whitener.csv"));
    write_matrix_csv(out, op.matrix);
  }
  if (!c.paths.raw_test_epochs.empty()) {
    EEGEpochSet test = apply_whitener(op, run(load_epochs(require_file(c.paths.raw_test_epochs,
                                                                       "paths.raw_test_epochs"))));
    save_epochs(c.test_epochs(), test);
    ctx.log.event("preprocess.test", {{"trials", test.trials()}, {"samples", test.samples}});
  }
}

void cmd_train(Context& ctx) {
  const auto& c = ctx.cfg;
  EEGEpochSet epochs = load_train(ctx);
  if (c.average_train_repetitions) epochs = average_repetitions(epochs);
  auto eeg = std::make_shared<const EEGEpochSet>(std::move(epochs));
  auto bank = std::make_shared<const FeatureBank>(load_images(ctx));
  auto pairs = make_pairs(eeg, bank);
  auto [tr, val] = split_train_val(pairs, c.train.n_val, c.seed);
  HyperParams hp = c.hyper;
  hp.channels = eeg->channels;
  hp.samples = eeg->samples;
  hp.feature_dim = bank->dim();
  ctx.log.event("train.start", {{"train_pairs", tr.size()}, {"val_pairs", val.size()},
                                {"learnable", learnable_count(init_params<float>(hp, c.seed))}});
  auto history = open_out(c.out("train_log.jsonl"));
  TrainResult result;
  try {
    result = nicekit::train(tr, val, hp, c.train, [&](const EpochRecord& r) {
      write_epoch_json(history, r);
      history << std::flush;
    });
  } catch (const TrainingDiverged& e) {
    save_checkpoint(c.out("last_good.ckpt"), e.last_good(), hp);
    throw;
  }
  save_checkpoint(c.checkpoint(), result.best, hp);
  ctx.log.event("train.done", {{"best_epoch", result.state.best_epoch},
                               {"best_val_loss", result.state.best_val_loss},
                               {"checkpoint", c.checkpoint().string()}});
}

void cmd_eval(Context& ctx) {
  const auto& c = ctx.cfg;
  const Checkpoint model = load_model(ctx);
  const EEGEpochSet test = load_test(ctx);
  const TemplateBank tb = test_templates(ctx, test);
  const auto enc = encode_test_set(model.params, model.hyper, test, c.analysis.test_averaging);
  const auto report = classify(enc.features, tb, enc.concepts);
  {
    auto out = open_out(c.out("eval_report.json"));
    write_report_json(out, report, tb, enc.stimuli);
  }
  {
    auto out = open_out(c.out("eval_summary.csv"));
    write_summary_csv(out, report);
  }
  const double top1 = topk_accuracy(report, 1);
  const double top5 = topk_accuracy(report, 5);
  ctx.log.event("eval.done", {{"trials", report.trials()}, {"concepts", tb.size()},
                              {"top1", top1}, {"top5", top5},
                              {"checkpoint", params_digest(model.params)}});
  std::cout << std::setprecision(6) << "top1 " << top1 << " top5 " << top5 << '\n';
}

void write_sweep(Context& ctx, const SweepResult& r, const std::string& name, json grid) {
  {
    auto out = open_out(ctx.cfg.out(name + ".csv"));
    write_sweep_csv(out, r);
  }
  json manifest = {{"command", "ablate"}, {"sweep", name}, {"axis", r.axis},
                   {"csv", name + ".csv"}, {"grid", std::move(grid)},
                   {"seed", ctx.cfg.seed}, {"threads", worker_count()}, {"meta", r.meta}};
  write_json(ctx.cfg.out(name + ".manifest.json"), manifest);
  ctx.log.event("ablate.done", {{"sweep", name}, {"points", r.size()}});
}

void cmd_ablate(Context& ctx, const std::string& mode) {
  const auto& c = ctx.cfg;
  const auto& a = c.analysis;
  const EEGEpochSet test = load_test(ctx);
  const TemplateBank tb = test_templates(ctx, test);
  // Records are only reused by runs with the same configuration and inputs.
  std::string key = effective_config(ctx.merged, c).dump();
  for (const fs::path& p : {c.train_epochs(), c.test_epochs(), c.feature_bank(), c.checkpoint()}) {
    std::error_code ec;
    const auto size = fs::file_size(p, ec);
    const auto stamp = fs::last_write_time(p, ec).time_since_epoch().count();
    key += '|' + p.string() + ':' + std::to_string(ec ? 0 : size) + ':' + std::to_string(ec ? 0 : stamp);
  }
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : key) h = (h ^ ch) * 1099511628211ull;
  std::ostringstream fingerprint;
  fingerprint << std::hex << std::setw(16) << std::setfill('0') << h;
  const fs::path records = c.out("records") / fingerprint.str();

  auto eval_setup = [&] {
    return EvalSetup{load_model(ctx), tb, a.test_averaging, records};
  };
  if (mode == "time") {
    json grid = {{"mode", to_string(a.time_mode)}, {"step_ms", a.time_grid.step_ms},
                 {"width_ms", a.time_grid.width_ms}, {"retrain", a.time_retrain}};
    SweepResult r;
    if (a.time_retrain) {
      r = sweep_time_retrained(trainer(ctx, load_images(ctx)), load_train(ctx), test, tb,
                               a.time_mode, a.time_grid, a.test_averaging, records);
    } else {
      r = sweep_time(eval_setup(), test, a.time_mode, a.time_grid);
    }
    write_sweep(ctx, r, "ablate_time_" + to_string(a.time_mode), grid);
  } else if (mode == "space") {
    RegionMap overrides;
    if (!c.preprocess.region_map.empty()) {
      overrides = load_region_map(require_file(c.preprocess.region_map, "preprocess.region_map"));
    }
    write_sweep(ctx, sweep_regions(eval_setup(), test, overrides), "ablate_space",
                {{"regions", kRegions}});
  } else if (mode == "band") {
    json names = json::array();
    for (const auto& b : a.bands) names.push_back(b.name);
    write_sweep(ctx,
                sweep_bands(trainer(ctx, load_images(ctx)), load_train(ctx), test, tb, a.bands,
                            a.test_averaging, records),
                "ablate_band", {{"bands", names}});
  } else if (mode == "size") {
    write_sweep(ctx,
                sweep_training_size(trainer(ctx, load_images(ctx)), load_train(ctx), test, tb,
                                    a.fractions, a.size_axis, c.seed, a.test_averaging, records),
                "ablate_size_" + to_string(a.size_axis),
                {{"fractions", a.fractions}, {"axis", to_string(a.size_axis)}});
  } else if (mode == "reps") {
    write_sweep(ctx, sweep_test_repetitions(eval_setup(), test, a.test_reps), "ablate_reps",
                {{"reps", a.test_reps}});
  } else {
    throw ValidationError("ablate --mode: expected time, space, band, size or reps");
  }
}

void cmd_rdm(Context& ctx) {
  const auto& c = ctx.cfg;
  const Checkpoint model = load_model(ctx);
  const EEGEpochSet test = load_test(ctx);
  const TemplateBank tb = test_templates(ctx, test);
  const json cats = load_json_file(require_file(c.category_map(), "paths.category_map"));
  std::map<std::string, std::string> category_map;
  try {
    category_map = cats.get<std::map<std::string, std::string>>();
  } catch (const json::exception&) {
    throw ValidationError("paths.category_map: expected an object of concept -> category");
  }
  const RDM r = rdm(model, test, tb, category_map);
  auto out = open_out(c.out("rdm.csv"));
  write_rdm_csv(out, r);
  ctx.log.event("rdm.done", {{"concepts", r.concepts.size()}});
}

void cmd_tfr(Context& ctx) {
  const auto& c = ctx.cfg;
  const EEGEpochSet test = load_test(ctx);
  std::vector<Index> channels;
  if (c.analysis.tfr_channels.empty()) {
    for (Index ch = 0; ch < test.channels; ++ch) {
      if (region_of(test.channel_names[static_cast<std::size_t>(ch)]) == "occipital") channels.push_back(ch);
    }
    if (channels.empty()) throw ValidationError("analysis.tfr_channels: no occipital electrodes in the montage");
  } else {
    channels = resolve_channels(test, c.analysis.tfr_channels);
  }
  const Matrix<double> power = time_frequency(test, channels, c.analysis.tfr_freqs);
  std::vector<std::string> rows, cols;
  for (double f : c.analysis.tfr_freqs) {
    std::ostringstream s;
    s << f;
    rows.push_back(s.str());
  }
  for (Index t = 0; t < test.samples; ++t) {
    std::ostringstream s;
    s << double(t - test.onset_sample) * 1000.0 / test.sample_rate;
    cols.push_back(s.str());
  }
  auto out = open_out(c.out("tfr.csv"));
  write_matrix_csv(out, power, rows, cols);
  ctx.log.event("tfr.done", {{"channels", channels.size()}, {"freqs", rows.size()}});
}

void cmd_gradcam(Context& ctx) {
  const auto& c = ctx.cfg;
  const Checkpoint model = load_model(ctx);
  const EEGEpochSet test = load_test(ctx);
  const TemplateBank tb = test_templates(ctx, test);
  const Vector<double> w = grad_cam_spatial(model, test, tb);
  auto out = open_out(c.out("gradcam.csv"));
  out << "electrode,weight\n" << std::setprecision(10);
  for (Index ch = 0; ch < w.size(); ++ch)
    out << test.channel_names[static_cast<std::size_t>(ch)] << ',' << w[ch] << '\n';
  ctx.log.event("gradcam.done", {{"electrodes", w.size()}});
}

void cmd_synth(Context& ctx, const std::string& spec_path) {
  const auto& c = ctx.cfg;
  const json doc = spec_path.empty() ? json(nullptr) : load_json_file(require_file(spec_path, "--spec"));
  const SynthRequest req = parse_synth_request(doc);
  const SynthDataset train = synth_generate(req.spec);
  const SynthDataset test =
      synth_generate(held_out_spec(req.spec, req.test_concepts, req.test_repetitions));
  save_epochs(c.train_epochs(), train.eeg);
  save_epochs(c.test_epochs(), test.eeg);
  save_feature_bank(c.feature_bank(), train.bank);
  save_feature_bank(c.out("test_images.feat"), test.bank);
  save_feature_bank(c.template_bank(), test.templates);
  save_ground_truth(c.out("truth"), train.truth);
  if (req.spec.n_categories > 0) {
    json cats = json::object();
    const auto& ids = test.truth.concepts.concept_ids();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto cat = static_cast<std::size_t>(test.truth.categories[i]) % kCategories.size();
      cats[ids[i]] = kCategories[cat];
    }
    write_json(c.category_map(), cats);
  }
  write_json(c.out("synth_spec.json"), to_json(req));
  ctx.log.event("synth.done", {{"train_trials", train.eeg.trials()},
                               {"test_trials", test.eeg.trials()}});
}

int cmd_gradcheck(Context& ctx) {
  constexpr double kTolerance = 1e-4;
  const auto reports = run_gradient_suite(ctx.cfg.seed == 0 ? 2024 : ctx.cfg.seed);
  auto out = open_out(ctx.cfg.out("gradcheck.csv"));
  out << "check,tensor,points,skipped,max_rel_error\n" << std::setprecision(6);
  bool ok = true;
  for (const auto& r : reports) {
    for (const auto& t : r.tensors)
      out << r.layer << ',' << t.name << ',' << t.points << ',' << t.skipped << ','
          << t.max_rel_error << '\n';
    const bool pass = r.passed(kTolerance);
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << r.layer << " max_rel_error " << r.max_rel_error()
              << " points " << r.total_points() << '\n';
  }
  ctx.log.event("gradcheck.done", {{"checks", reports.size()}, {"passed", ok}});
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nice: EEG-image contrastive decoding toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<Index> epochs;
  std::optional<Index> batch_size;
  std::optional<std::string> module;
  app.add_option("-c,--config", config_path, "JSON run configuration");
  app.add_option("-s,--set", overrides, "Override a config field, e.g. train.epochs=5");
  app.add_option("-o,--out", out_dir, "Output directory (paths.output_dir)");
  app.add_option("--seed", seed, "Seed (seed)");
  app.add_option("--epochs", epochs, "Training epochs (train.epochs)");
  app.add_option("--batch-size", batch_size, "Batch size (train.batch_size)");
  app.add_option("--module", module, "Spatial module none|sa|ga (hyper.spatial_module)");

  std::string ablate_mode;
  std::string spec_path;
  auto* preprocess = app.add_subcommand("preprocess", "Baseline, downsample, crop and whiten epochs");
  auto* train = app.add_subcommand("train", "Contrastive training");
  auto* eval = app.add_subcommand("eval", "Zero-shot evaluation on the test set");
  auto* ablate = app.add_subcommand("ablate", "Time, electrode, band, data-size or repetition sweep");
  ablate->add_option("--mode", ablate_mode, "time|space|band|size|reps")
      ->required()
      ->check(CLI::IsMember({"time", "space", "band", "size", "reps"}));
  auto* rdm_cmd = app.add_subcommand("rdm", "EEG-template similarity matrix by category");
  auto* tfr = app.add_subcommand("tfr", "Morlet time-frequency power of the test set");
  auto* gradcam = app.add_subcommand("gradcam", "Per-electrode Grad-CAM of the spatial module");
  auto* synth = app.add_subcommand("synth", "Generate a planted-signal dataset");
  synth->add_option("--spec", spec_path, "JSON synthetic spec");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Context ctx;
  try {
    json user = config_path.empty() ? json(nullptr) : load_json_file(config_path);
    ctx.merged = merge_config(user);
    for (const auto& o : overrides) apply_override(ctx.merged, o);
    if (out_dir) ctx.merged["paths"]["output_dir"] = *out_dir;
    if (seed) ctx.merged["seed"] = *seed;
    if (epochs) apply_override(ctx.merged, "train.epochs=" + std::to_string(*epochs));
    if (batch_size) apply_override(ctx.merged, "train.batch_size=" + std::to_string(*batch_size));
    if (module) apply_override(ctx.merged, "hyper.spatial_module=\"" + *module + "\"");
    ctx.cfg = parse_config(ctx.merged);
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitValidation;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    fs::create_directories(ctx.cfg.paths.output_dir);
    ctx.log.open(ctx.cfg.out("log.jsonl"));
    write_json(ctx.cfg.out(command + ".config.json"), effective_config(ctx.merged, ctx.cfg));
    ctx.log.event("start", {{"command", command}, {"threads", worker_count()}});
    int status = kExitOk;
    if (*preprocess) cmd_preprocess(ctx);
    else if (*train) cmd_train(ctx);
    else if (*eval) cmd_eval(ctx);
    else if (*ablate) cmd_ablate(ctx, ablate_mode);
    else if (*rdm_cmd) cmd_rdm(ctx);
    else if (*tfr) cmd_tfr(ctx);
    else if (*gradcam) cmd_gradcam(ctx);
    else if (*synth) cmd_synth(ctx, spec_path);
    else if (*gradcheck) status = cmd_gradcheck(ctx);
    ctx.log.event("finish", {{"command", command}, {"status", status}});
    return status;
  } catch (const ValidationError& e) {
    ctx.log.event("error", {{"kind", "validation"}, {"message", e.what()}});
    return kExitValidation;
  } catch (const std::exception& e) {
    ctx.log.event("error", {{"kind", "runtime"}, {"message", e.what()}});
    return kExitRuntime;
  }
}
