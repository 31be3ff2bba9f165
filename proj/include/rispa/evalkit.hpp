#pragma once

// Experiment orchestration: the collect -> FSE -> IDE -> closed-loop chain,
// the three special-case targets, and the obstacle adaptation study.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rispa/csv.hpp"
#include "rispa/dataio.hpp"
#include "rispa/engines.hpp"
#include "rispa/neural.hpp"
#include "rispa/random.hpp"
#include "rispa/scene.hpp"

namespace rispa {

struct PipelineConfig {
  std::string preset = "desk";
  std::size_t profile_count = 2000;
  std::size_t target_count = 8000;
  int fse_epochs = 1000;
  int ide_epochs = 600;
  double fse_learning_rate = 2e-3;
  double ide_learning_rate = 5e-4;
  int batch_size = 128;
  double target_low = 0.0;
  double target_high = 0.6;
  QuantizerConfig quantizer{.temperature_degrees = 3.0};
  SplitSpec measurement_split = kMeasurementSplit;
  SplitSpec target_split = kTargetSplit;
  unsigned threads = 1;  // collection and evaluation only
  bool warm_start_retraining = false;
};

/// CI-sized run. Trains the tandem at a 3-degree quantizer temperature.
inline PipelineConfig desk_preset() { return PipelineConfig{}; }

/// Full-size run: 10000 measurements, 48000 targets, 10000 / 6000 epochs.
inline PipelineConfig paper_preset() {
  PipelineConfig c;
  c.preset = "paper";
  c.profile_count = 10000;
  c.target_count = 48000;
  c.fse_epochs = 10000;
  c.ide_epochs = 6000;
  c.fse_learning_rate = 1e-4;
  c.ide_learning_rate = 5e-4;
  c.batch_size = 256;
  c.quantizer.temperature_degrees = 10.0;
  return c;
}

inline PipelineConfig preset_config(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("preset", "expected 'desk' or 'paper', got '" + name + "'");
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  return {{"preset", c.preset},
          {"profile_count", c.profile_count},
          {"target_count", c.target_count},
          {"fse_epochs", c.fse_epochs},
          {"ide_epochs", c.ide_epochs},
          {"fse_learning_rate", c.fse_learning_rate},
          {"ide_learning_rate", c.ide_learning_rate},
          {"batch_size", c.batch_size},
          {"target_low", c.target_low},
          {"target_high", c.target_high},
          {"quantizer", quantizer_to_json(c.quantizer)},
          {"measurement_split", {c.measurement_split.train_fraction, c.measurement_split.val_fraction,
                                 c.measurement_split.test_fraction}},
          {"target_split", {c.target_split.train_fraction, c.target_split.val_fraction, c.target_split.test_fraction}},
          {"warm_start_retraining", c.warm_start_retraining}};
}

/// Thread count is excluded: it does not change results.
inline std::string config_digest(const PipelineConfig& c) { return sha256_hex(config_to_json(c).dump()); }

/// Independent stream seeds for each stage of one run.
struct StageSeeds {
  std::uint64_t collect, measurement_split, fse, targets, target_split, ide, eval_noise;

  static StageSeeds from(std::uint64_t run_seed) {
    return {derive_seed(run_seed, 1), derive_seed(run_seed, 2), derive_seed(run_seed, 3), derive_seed(run_seed, 4),
            derive_seed(run_seed, 5), derive_seed(run_seed, 6), derive_seed(run_seed, 7)};
  }
};

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); }
};

inline ScatterDataset run_collect(const Scene& scene, const PipelineConfig& cfg, std::uint64_t seed,
                                  std::optional<double> reference_i_max = std::nullopt) {
  return collect(scene, cfg.profile_count, StageSeeds::from(seed).collect, {cfg.threads, reference_i_max});
}

inline FseTraining run_train_fse(const ScatterDataset& data, const PipelineConfig& cfg, std::uint64_t seed,
                                 std::optional<nn::Mlp> warm_start = std::nullopt) {
  const auto s = StageSeeds::from(seed);
  const auto parts = split(data, cfg.measurement_split, s.measurement_split);
  FseOptions opt;
  opt.epochs = cfg.fse_epochs;
  opt.learning_rate = cfg.fse_learning_rate;
  opt.batch_size = cfg.batch_size;
  opt.seed = s.fse;
  opt.warm_start = std::move(warm_start);
  return train_fse(parts, opt);
}

inline TargetDataset run_generate_targets(const PipelineConfig& cfg, std::uint64_t seed, int probe_count) {
  return generate_targets(cfg.target_count, cfg.target_low, cfg.target_high, StageSeeds::from(seed).targets,
                          probe_count);
}

inline Split<TargetDataset> run_split_targets(const TargetDataset& t, const PipelineConfig& cfg, std::uint64_t seed) {
  return split(t, cfg.target_split, StageSeeds::from(seed).target_split);
}

inline IdeTraining run_train_ide(const FseModel& fse, const Split<TargetDataset>& targets, const PipelineConfig& cfg,
                                 std::uint64_t seed, std::optional<nn::Mlp> warm_start = std::nullopt) {
  IdeOptions opt;
  opt.epochs = cfg.ide_epochs;
  opt.learning_rate = cfg.ide_learning_rate;
  opt.batch_size = cfg.batch_size;
  opt.seed = StageSeeds::from(seed).ide;
  opt.quantizer = cfg.quantizer;
  opt.warm_start = std::move(warm_start);
  return train_ide(fse, targets, opt);
}

inline EvalResult run_eval(const IdeModel& ide, const FseModel& fse, const Scene& scene,
                           const std::vector<Intensities>& targets, const PipelineConfig& cfg, std::uint64_t seed) {
  return closed_loop_eval(ide, fse, scene, targets, {cfg.threads, StageSeeds::from(seed).eval_noise},
                          [](const std::string&) {});
}

struct PipelineResult {
  std::uint64_t seed = 0;
  ScatterDataset dataset;
  FseTraining fse;
  TargetDataset targets;
  Split<TargetDataset> target_split;
  IdeTraining ide;
  EvalResult eval;
  double collect_seconds = 0, fse_seconds = 0, ide_seconds = 0, eval_seconds = 0;
};

/// Collect, fit the FSE, generate and split targets, fit the IDE, then run
/// the closed loop on the test targets.
inline PipelineResult run_pipeline(const Scene& scene, const PipelineConfig& cfg, std::uint64_t seed) {
  PipelineResult r;
  r.seed = seed;
  Timer t;
  r.dataset = run_collect(scene, cfg, seed);
  r.collect_seconds = t.seconds();
  t = {};
  r.fse = run_train_fse(r.dataset, cfg, seed);
  r.fse_seconds = t.seconds();
  t = {};
  r.targets = run_generate_targets(cfg, seed, static_cast<int>(scene.probe_count()));
  r.target_split = run_split_targets(r.targets, cfg, seed);
  r.ide = run_train_ide(r.fse.model, r.target_split, cfg, seed);
  r.ide_seconds = t.seconds();
  t = {};
  r.eval = run_eval(r.ide.model, r.fse.model, scene, r.target_split.test.targets, cfg, seed);
  r.eval_seconds = t.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Special cases

struct SpecialCase {
  std::string name;
  Intensities target, predicted, measured;
};

/// "001": one strong probe; "101": the outer probes strong, centre weak;
/// "000": all probes dark.
inline std::vector<std::pair<std::string, Intensities>> special_case_targets() {
  return {{"001", {0.0, 0.0, 0.55}}, {"101", {0.55, 0.0, 0.55}}, {"000", {0.0, 0.0, 0.0}}};
}

inline std::vector<SpecialCase> run_special_cases(const IdeModel& ide, const FseModel& fse, const Scene& scene,
                                                  std::uint64_t noise_seed = 0) {
  if (ide.probe_count() != 3) throw InvalidArgument("special cases are defined for three probes");
  std::vector<SpecialCase> out;
  std::vector<Intensities> targets;
  for (const auto& [name, t] : special_case_targets()) {
    out.push_back({name, t, {}, {}});
    targets.push_back(t);
  }
  const auto res = closed_loop_eval(ide, fse, scene, targets, {1, noise_seed});
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].predicted = res.rows[i].predicted;
    out[i].measured = res.rows[i].measured;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adaptation to a changed scene

struct AdaptationReport {
  std::vector<double> baseline_mse;   // old models, old scene
  std::vector<double> stale_mse;      // old models, new scene
  std::vector<double> retrained_mse;  // re-collected and retrained, new scene
  double collection_seconds = 0.0;
  double training_seconds = 0.0;
  EvalResult stale, retrained;

  static double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }
};

/// Evaluates a pipeline trained in `baseline_scene` against `changed_scene`,
/// then re-collects in the changed scene (normalized by the baseline i_max),
/// retrains both engines with `retrain_seed` and evaluates on the same test
/// targets.
inline AdaptationReport run_adaptation_study(const PipelineResult& baseline, const Scene& baseline_scene,
                                             const Scene& changed_scene, const PipelineConfig& cfg,
                                             std::uint64_t retrain_seed) {
  if (baseline_scene.column_count != changed_scene.column_count ||
      baseline_scene.probe_count() != changed_scene.probe_count())
    throw InvalidArgument("adaptation scenes must share columns and probes");
  AdaptationReport rep;
  const auto& test_targets = baseline.target_split.test.targets;
  rep.baseline_mse = baseline.eval.measured_mse;
  rep.stale = run_eval(baseline.ide.model, baseline.fse.model, changed_scene, test_targets, cfg, baseline.seed);
  rep.stale_mse = rep.stale.measured_mse;

  Timer t;
  const auto data = run_collect(changed_scene, cfg, retrain_seed, baseline.fse.model.i_max);
  rep.collection_seconds = t.seconds();
  t = {};
  std::optional<nn::Mlp> fse_init, ide_init;
  if (cfg.warm_start_retraining) {
    fse_init = baseline.fse.model.mlp;
    ide_init = baseline.ide.model.mlp;
  }
  const auto fse = run_train_fse(data, cfg, retrain_seed, fse_init);
  const auto ide = run_train_ide(fse.model, baseline.target_split, cfg, retrain_seed, ide_init);
  rep.training_seconds = t.seconds();
  rep.retrained = run_eval(ide.model, fse.model, changed_scene, test_targets, cfg, retrain_seed);
  rep.retrained_mse = rep.retrained.measured_mse;
  return rep;
}

inline AdaptationReport run_adaptation_study(const Scene& baseline_scene, const Scene& changed_scene,
                                             const PipelineConfig& cfg, std::uint64_t baseline_seed,
                                             std::uint64_t retrain_seed) {
  const auto baseline = run_pipeline(baseline_scene, cfg, baseline_seed);
  return run_adaptation_study(baseline, baseline_scene, changed_scene, cfg, retrain_seed);
}

// ---------------------------------------------------------------------------
// Exports

inline std::vector<std::string> numbered(const std::string& stem, std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t j = 1; j <= n; ++j) v.push_back(stem + "_" + std::to_string(j));
  return v;
}

/// Columns target_1..P, predicted_1..P, measured_1..P; one row per target.
inline CsvTable scatter_table(const EvalResult& res) {
  if (res.rows.empty()) throw InvalidArgument("evaluation table is empty");
  const std::size_t p = res.rows.front().target.size();
  CsvTable t;
  for (const char* stem : {"target", "predicted", "measured"}) {
    const auto names = numbered(stem, p);
    t.header.insert(t.header.end(), names.begin(), names.end());
  }
  for (const auto& r : res.rows) {
    std::vector<std::string> cells;
    for (const auto* v : {&r.target, &r.predicted, &r.measured})
      for (double x : *v) cells.push_back(format_double(x));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline void export_scatter(const EvalResult& res, const std::string& path) { write_csv(scatter_table(res), path); }

inline void export_history(const nn::TrainReport& rep, const std::string& path) {
  CsvTable t;
  t.header = {"epoch", "train_mse", "val_mse"};
  for (std::size_t e = 0; e < rep.train_loss.size(); ++e)
    t.rows.push_back({std::to_string(e + 1), format_double(rep.train_loss[e]), format_double(rep.val_loss[e])});
  write_csv(t, path);
}

inline void export_special_cases(const std::vector<SpecialCase>& cases, const std::string& path) {
  if (cases.empty()) throw InvalidArgument("special-case table is empty");
  CsvTable t;
  t.header = {"case"};
  const std::size_t p = cases.front().target.size();
  for (const char* stem : {"target", "predicted", "measured"}) {
    const auto names = numbered(stem, p);
    t.header.insert(t.header.end(), names.begin(), names.end());
  }
  for (const auto& c : cases) {
    std::vector<std::string> cells{c.name};
    for (const auto* v : {&c.target, &c.predicted, &c.measured})
      for (double x : *v) cells.push_back(format_double(x));
    t.rows.push_back(std::move(cells));
  }
  write_csv(t, path);
}

inline nlohmann::json eval_to_json(const EvalResult& r) {
  return {{"targets", r.rows.size()},
          {"predicted_mse", r.predicted_mse},
          {"measured_mse", r.measured_mse},
          {"mean_predicted_mse", r.mean_predicted_mse()},
          {"mean_measured_mse", r.mean_measured_mse()}};
}

inline nlohmann::json special_cases_to_json(const std::vector<SpecialCase>& cases) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cases)
    j.push_back({{"case", c.name}, {"target", c.target}, {"predicted", c.predicted}, {"measured", c.measured}});
  return j;
}

inline nlohmann::json adaptation_to_json(const AdaptationReport& r) {
  return {{"baseline_mse", r.baseline_mse},
          {"stale_mse", r.stale_mse},
          {"retrained_mse", r.retrained_mse},
          {"stale_mean_mse", AdaptationReport::mean(r.stale_mse)},
          {"retrained_mean_mse", AdaptationReport::mean(r.retrained_mse)},
          {"collection_seconds", r.collection_seconds},
          {"training_seconds", r.training_seconds}};
}

}  // namespace rispa
