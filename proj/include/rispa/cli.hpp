#pragma once

// Command-line front end. Every command reads and writes files in one flat
// output directory:
//
//   dataset.jsonl      collect
//   fse.json           train-fse   (+ fse_history.csv)
//   targets.jsonl      train-ide   (+ ide.json, quantizer.json, ide_history.csv)
//   eval.csv           eval        (+ summary.json)
//   special_cases.csv  special-cases
//   adaptation.json    adapt       (+ adapt_stale.csv, adapt_retrained.csv)
//   manifest.json      updated by every command: seed, digests, artifacts

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rispa/csv.hpp"
#include "rispa/dataio.hpp"
#include "rispa/digest.hpp"
#include "rispa/engines.hpp"
#include "rispa/errors.hpp"
#include "rispa/evalkit.hpp"
#include "rispa/scene.hpp"

namespace rispa::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kMissingDependency = 3,
  kData = 4,
  kDiverged = 5,
  kDigestMismatch = 6,
};

struct DigestMismatch : Error {
  using Error::Error;
};

struct RunConfig {
  std::string command;
  std::string scene_path;
  std::string scene_b_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string preset = "desk";
  std::optional<int> epochs_fse, epochs_ide, batch;
  std::optional<double> lr_fse, lr_ide, tau, noise;
  std::optional<std::size_t> profiles, targets;
  unsigned threads = 1;
  bool force = false;
};

inline PipelineConfig pipeline_config(const RunConfig& rc) {
  PipelineConfig c = preset_config(rc.preset);
  if (rc.epochs_fse) c.fse_epochs = *rc.epochs_fse;
  if (rc.epochs_ide) c.ide_epochs = *rc.epochs_ide;
  if (rc.batch) c.batch_size = *rc.batch;
  if (rc.lr_fse) c.fse_learning_rate = *rc.lr_fse;
  if (rc.lr_ide) c.ide_learning_rate = *rc.lr_ide;
  if (rc.tau) c.quantizer.temperature_degrees = *rc.tau;
  if (rc.profiles) c.profile_count = *rc.profiles;
  if (rc.targets) c.target_count = *rc.targets;
  c.threads = rc.threads;
  if (c.fse_epochs < 0) throw ConfigError("epochs-fse", "must be >= 0");
  if (c.ide_epochs < 0) throw ConfigError("epochs-ide", "must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch", "must be >= 1");
  if (!(c.fse_learning_rate > 0)) throw ConfigError("lr-fse", "must be positive");
  if (!(c.ide_learning_rate > 0)) throw ConfigError("lr-ide", "must be positive");
  if (!(c.quantizer.temperature_degrees > 0)) throw ConfigError("tau", "must be positive");
  if (c.threads < 1) throw ConfigError("threads", "must be >= 1");
  return c;
}

inline Scene resolve_scene(const std::string& path, const std::optional<double>& noise) {
  Scene s = path.empty() ? default_scene() : load_scene(path);
  if (noise) {
    if (!(*noise >= 0.0)) throw ConfigError("noise", "must be >= 0");
    s.noise_sigma = *noise;
  }
  validate(s);
  return s;
}

class Workspace {
 public:
  Workspace(const RunConfig& rc, std::ostream& log)
      : rc_(rc), cfg_(pipeline_config(rc)), dir_(rc.out_dir), log_(log) {
    fs::create_directories(dir_);
    if (fs::exists(path("manifest.json"))) manifest_ = read_json(path("manifest.json"));
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  const PipelineConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return rc_.seed; }
  std::ostream& log() { return log_; }

  std::string require(const std::string& name, const std::string& stage) const {
    const auto p = path(name);
    if (!fs::exists(p)) throw MissingDependency(stage);
    return p;
  }

  /// Records an artifact with the seed, configuration and scene that produced it.
  void record(const std::string& name, const std::string& stage, const std::string& scene_dig) {
    manifest_["seed"] = rc_.seed;
    manifest_["config_digest"] = config_digest(cfg_);
    manifest_["config"] = config_to_json(cfg_);
    manifest_["artifacts"][name] = {{"stage", stage},
                                    {"sha256", sha256_file(path(name))},
                                    {"seed", rc_.seed},
                                    {"config_digest", config_digest(cfg_)},
                                    {"scene_digest", scene_dig}};
    write_json(manifest_, path("manifest.json"));
  }

 private:
  const RunConfig& rc_;
  PipelineConfig cfg_;
  fs::path dir_;
  std::ostream& log_;
  nlohmann::json manifest_ = nlohmann::json::object();
};

inline std::string fmt_seconds(double s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << s << " s";
  return os.str();
}

inline std::string fmt_vec(const std::vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(4) << '[';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Stages

inline ScatterDataset stage_collect(Workspace& ws, const Scene& scene) {
  Timer t;
  const auto d = run_collect(scene, ws.config(), ws.seed());
  save_dataset(d, ws.path("dataset.jsonl"));
  ws.record("dataset.jsonl", "collect", d.scene_digest);
  ws.log() << "collect: " << d.size() << " profiles in " << fmt_seconds(t.seconds()) << ", i_max = " << d.i_max << ", fraction < 0.6 per probe "
           << fmt_vec(fraction_below(d, 0.6)) << '\n';
  return d;
}

inline FseModel stage_train_fse(Workspace& ws, const Scene& scene) {
  const auto data_path = ws.require("dataset.jsonl", "collect");
  const auto data = load_dataset(data_path, &scene);
  auto fse = run_train_fse(data, ws.config(), ws.seed());
  fse.model.dataset_digest = sha256_file(data_path);
  save_fse(fse.model, ws.path("fse.json"));
  export_history(fse.report, ws.path("fse_history.csv"));
  ws.record("fse.json", "train-fse", data.scene_digest);
  ws.record("fse_history.csv", "train-fse", data.scene_digest);
  ws.log() << "train-fse: " << ws.config().fse_epochs << " epochs in " << fmt_seconds(fse.report.elapsed_seconds)
           << ", val mse " << fse.val_mse << ", test mse "
           << fse.test_mse << '\n';
  return fse.model;
}

inline FseModel load_fse_checked(Workspace& ws, const Scene& scene, bool force) {
  auto fse = load_fse(ws.require("fse.json", "train-fse"));
  if (fse.scene_digest != scene_digest(scene)) {
    if (!force) throw DigestMismatch("scene digest differs from the one the FSE was trained on (use --force)");
    ws.log() << "warning: scene digest differs from the FSE's training scene (--force)\n";
  }
  return fse;
}

inline IdeModel stage_train_ide(Workspace& ws, const Scene& scene) {
  const auto fse = load_fse(ws.require("fse.json", "train-fse"));
  const auto targets = run_generate_targets(ws.config(), ws.seed(), fse.probe_count());
  save_targets(targets, ws.path("targets.jsonl"));
  const auto parts = run_split_targets(targets, ws.config(), ws.seed());
  const auto ide = run_train_ide(fse, parts, ws.config(), ws.seed());
  save_ide(ide.model, ws.path("ide.json"));
  write_json(quantizer_to_json(ide.model.quantizer), ws.path("quantizer.json"));
  export_history(ide.report, ws.path("ide_history.csv"));
  const auto dig = scene_digest(scene);
  for (const char* name : {"targets.jsonl", "ide.json", "quantizer.json", "ide_history.csv"})
    ws.record(name, "train-ide", dig);
  ws.log() << "train-ide: " << ws.config().ide_epochs << " epochs in " << fmt_seconds(ide.report.elapsed_seconds)
           << ", val mse " << ide.val_mse << '\n';
  return ide.model;
}

inline EvalResult stage_eval(Workspace& ws, const Scene& scene, bool force) {
  const auto fse = load_fse_checked(ws, scene, force);
  const auto ide = load_ide(ws.require("ide.json", "train-ide"));
  if (ide.fse_digest != mlp_digest(fse.mlp)) throw DigestMismatch("ide.json was trained through a different FSE");
  const auto targets = load_targets(ws.require("targets.jsonl", "train-ide"));
  const auto parts = run_split_targets(targets, ws.config(), ws.seed());
  Timer t;
  const auto res = run_eval(ide, fse, scene, parts.test.targets, ws.config(), ws.seed());
  export_scatter(res, ws.path("eval.csv"));
  const double gap = deployment_gap_rms(ide, fse, parts.test.targets);
  nlohmann::json summary = {{"seed", ws.seed()},
                            {"config_digest", config_digest(ws.config())},
                            {"scene_digest", scene_digest(scene)},
                            {"closed_loop", eval_to_json(res)},
                            {"deployment_gap_rms", gap},
                            {"eval_seconds", t.seconds()}};
  write_json(summary, ws.path("summary.json"));
  ws.record("eval.csv", "eval", scene_digest(scene));
  ws.record("summary.json", "eval", scene_digest(scene));
  ws.log() << "eval: " << res.rows.size() << " targets, predicted mse " << fmt_vec(res.predicted_mse)
           << ", measured mse " << fmt_vec(res.measured_mse) << ", soft/hard gap " << gap << '\n';
  return res;
}

inline void stage_special_cases(Workspace& ws, const Scene& scene, bool force) {
  const auto fse = load_fse_checked(ws, scene, force);
  const auto ide = load_ide(ws.require("ide.json", "train-ide"));
  const auto cases = run_special_cases(ide, fse, scene, StageSeeds::from(ws.seed()).eval_noise);
  export_special_cases(cases, ws.path("special_cases.csv"));
  ws.record("special_cases.csv", "special-cases", scene_digest(scene));
  for (const auto& c : cases)
    ws.log() << "case " << c.name << ": target " << fmt_vec(c.target) << " predicted " << fmt_vec(c.predicted)
             << " measured " << fmt_vec(c.measured) << '\n';
}

inline void stage_adapt(Workspace& ws, const Scene& scene_a, const Scene& scene_b) {
  Timer total;
  const auto& cfg = ws.config();
  PipelineResult base = run_pipeline(scene_a, cfg, ws.seed());
  const std::uint64_t retrain_seed = derive_seed(ws.seed(), 0xADA7);
  const auto rep = run_adaptation_study(base, scene_a, scene_b, cfg, retrain_seed);
  export_scatter(rep.stale, ws.path("adapt_stale.csv"));
  export_scatter(rep.retrained, ws.path("adapt_retrained.csv"));
  auto j = adaptation_to_json(rep);
  j["seed"] = ws.seed();
  j["retrain_seed"] = retrain_seed;
  j["config_digest"] = config_digest(cfg);
  j["scene_digest"] = scene_digest(scene_a);
  j["scene_b_digest"] = scene_digest(scene_b);
  j["total_seconds"] = total.seconds();
  write_json(j, ws.path("adaptation.json"));
  for (const char* name : {"adapt_stale.csv", "adapt_retrained.csv", "adaptation.json"})
    ws.record(name, "adapt", scene_digest(scene_b));
  ws.log() << "adapt: baseline mse " << fmt_vec(rep.baseline_mse) << ", stale mse " << fmt_vec(rep.stale_mse)
           << ", retrained mse " << fmt_vec(rep.retrained_mse) << ", re-collect " << fmt_seconds(rep.collection_seconds)
           << " + retrain " << fmt_seconds(rep.training_seconds) << '\n';
}

// ---------------------------------------------------------------------------

inline int dispatch(const RunConfig& rc, std::ostream& out) {
  const Scene scene = resolve_scene(rc.scene_path, rc.noise);
  Workspace ws(rc, out);
  const auto& c = rc.command;
  if (c == "collect") {
    stage_collect(ws, scene);
  } else if (c == "train-fse") {
    stage_train_fse(ws, scene);
  } else if (c == "train-ide") {
    stage_train_ide(ws, scene);
  } else if (c == "eval") {
    stage_eval(ws, scene, rc.force);
  } else if (c == "special-cases") {
    stage_special_cases(ws, scene, rc.force);
  } else if (c == "adapt") {
    if (rc.scene_b_path.empty()) throw ConfigError("scene-b", "adapt needs --scene-b");
    stage_adapt(ws, scene, resolve_scene(rc.scene_b_path, rc.noise));
  } else if (c == "pipeline") {
    Timer t;
    stage_collect(ws, scene);
    stage_train_fse(ws, scene);
    stage_train_ide(ws, scene);
    stage_eval(ws, scene, false);
    stage_special_cases(ws, scene, false);
    out << "pipeline: done in " << fmt_seconds(t.seconds()) << '\n';
  } else {
    throw ConfigError("command", "unknown command '" + c + "'");
  }
  return kOk;
}

/// Parses `args` (without the program name) and runs one command. Errors are
/// reported on `err` with a category and mapped to a nonzero exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig rc;
  const char* env_out = std::getenv("RISPA_OUT");
  rc.out_dir = env_out && *env_out ? env_out : "rispa_out";

  CLI::App app{"Metasurface power allocation: virtual experiment and tandem networks", "rispa"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands{
      {"collect", "measure random profiles into dataset.jsonl"},
      {"train-fse", "fit the forward scattering engine"},
      {"train-ide", "fit the inverse-design engine through the frozen FSE"},
      {"eval", "closed-loop evaluation on the test targets"},
      {"special-cases", "run the 001 / 101 / 000 targets"},
      {"adapt", "obstacle adaptation study (needs --scene-b)"},
      {"pipeline", "collect, train-fse, train-ide, eval and special-cases"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&rc, name = name] { rc.command = name; });
    sub->add_option("--scene", rc.scene_path, "scene config (JSON); default scene when omitted");
    sub->add_option("--out", rc.out_dir, "output directory (default $RISPA_OUT or ./rispa_out)");
    sub->add_option("--seed", rc.seed, "run seed");
    sub->add_option("--preset", rc.preset, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--epochs-fse", rc.epochs_fse);
    sub->add_option("--epochs-ide", rc.epochs_ide);
    sub->add_option("--lr-fse", rc.lr_fse);
    sub->add_option("--lr-ide", rc.lr_ide);
    sub->add_option("--batch", rc.batch);
    sub->add_option("--tau", rc.tau, "soft quantizer temperature, degrees");
    sub->add_option("--noise", rc.noise, "override the scene's relative noise sigma");
    sub->add_option("--profiles", rc.profiles, "measurement count");
    sub->add_option("--targets", rc.targets, "target count");
    sub->add_option("--threads", rc.threads, "worker threads for collect and eval");
    sub->add_flag("--force", rc.force, "accept a scene digest mismatch");
    if (name == "adapt") sub->add_option("--scene-b", rc.scene_b_path, "changed scene config");
  }

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error [usage]: " << e.what() << '\n';
    return kConfig;
  }

  try {
    return dispatch(rc, out);
  } catch (const MissingDependency& e) {
    err << "error [dependency]: " << e.what() << '\n';
    return kMissingDependency;
  } catch (const ConfigError& e) {
    err << "error [config]: " << e.what() << '\n';
    return kConfig;
  } catch (const DigestMismatch& e) {
    err << "error [digest]: " << e.what() << '\n';
    return kDigestMismatch;
  } catch (const nn::Diverged& e) {
    err << "error [training]: " << e.what() << '\n';
    return kDiverged;
  } catch (const ParseError& e) {
    err << "error [data]: " << e.what() << '\n';
    return kData;
  } catch (const ValidationError& e) {
    err << "error [data]: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace rispa::cli
