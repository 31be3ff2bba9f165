#pragma once

// The two learning stages and their use:
//  * forward scattering engine (FSE): profile encoding -> normalized probe
//    intensities, fitted to measurements;
//  * inverse-design engine (IDE): target intensities -> column phases, fitted
//    through the soft quantizer and the frozen FSE (tandem training).

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rispa/dataio.hpp"
#include "rispa/digest.hpp"
#include "rispa/errors.hpp"
#include "rispa/neural.hpp"
#include "rispa/parallel.hpp"
#include "rispa/quantizer.hpp"
#include "rispa/scene.hpp"

namespace rispa {

using nn::Index;
using nn::Matrix;

/// Interleaved [cos p1, sin p1, ..., cos pN, sin pN] for angles in degrees.
inline std::vector<double> encode_phases(std::span<const double> degrees) {
  std::vector<double> out(2 * degrees.size());
  for (std::size_t i = 0; i < degrees.size(); ++i) {
    const double r = deg2rad(degrees[i]);
    out[2 * i] = std::cos(r);
    out[2 * i + 1] = std::sin(r);
  }
  return out;
}

inline std::vector<double> profile_degrees(const PhaseProfile& p) {
  std::vector<double> d(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) d[i] = p[i].degrees();
  return d;
}

/// Encodes each profile as one column of a (2 * columns) x count matrix.
inline Matrix encode_profiles(const std::vector<PhaseProfile>& profiles, int columns) {
  Matrix m(2 * columns, static_cast<Index>(profiles.size()));
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    if (profiles[k].size() != static_cast<std::size_t>(columns))
      throw InvalidArgument("profile length does not match the network input");
    const auto enc = encode_phases(profile_degrees(profiles[k]));
    for (int r = 0; r < 2 * columns; ++r) m(r, static_cast<Index>(k)) = enc[static_cast<std::size_t>(r)];
  }
  return m;
}

inline Matrix intensities_matrix(const std::vector<Intensities>& rows, int probes) {
  Matrix m(probes, static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != static_cast<std::size_t>(probes)) throw InvalidArgument("intensity length mismatch");
    for (int j = 0; j < probes; ++j) m(j, static_cast<Index>(k)) = rows[k][static_cast<std::size_t>(j)];
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward scattering engine

struct FseModel {
  nn::Mlp mlp;
  double i_max = 1.0;  // normalization of the training measurements
  std::string scene_digest;
  std::string dataset_digest;
  std::uint64_t dataset_seed = 0;
  std::uint64_t train_seed = 0;
  int epochs = 0;
  double learning_rate = 0.0;
  int batch_size = 0;

  int column_count() const { return mlp.input_dim() / 2; }
  int probe_count() const { return mlp.output_dim(); }
};

/// Content digest of the network parameters.
inline std::string mlp_digest(const nn::Mlp& mlp) { return sha256_hex(nn::mlp_to_json(mlp).dump()); }

struct FseOptions {
  int epochs = 1000;
  double learning_rate = 1e-3;
  int batch_size = 256;
  std::uint64_t seed = 0;
  std::vector<int> hidden{100, 100};
  std::optional<nn::Mlp> warm_start;
};

struct FseTraining {
  FseModel model;
  nn::TrainReport report;
  double val_mse = 0.0;
  double test_mse = 0.0;
};

inline Matrix profiles_matrix(const ScatterDataset& d) {
  std::vector<PhaseProfile> p;
  p.reserve(d.size());
  for (const auto& r : d.records) p.push_back(r.profile);
  return encode_profiles(p, d.column_count);
}

inline Matrix normalized_matrix(const ScatterDataset& d) {
  std::vector<Intensities> v;
  v.reserve(d.size());
  for (const auto& r : d.records) v.push_back(r.normalized);
  return intensities_matrix(v, d.probe_count);
}

/// Regression of normalized intensities on encoded profiles.
inline FseTraining train_fse(const Split<ScatterDataset>& data, const FseOptions& opt) {
  const int columns = data.train.column_count, probes = data.train.probe_count;
  std::vector<int> dims{2 * columns};
  dims.insert(dims.end(), opt.hidden.begin(), opt.hidden.end());
  dims.push_back(probes);
  nn::Mlp init = opt.warm_start ? *opt.warm_start : nn::init_mlp(dims, derive_seed(opt.seed, 0));
  if (init.dims != dims) throw InvalidArgument("warm-start network has the wrong shape");

  const Matrix xtr = profiles_matrix(data.train), ytr = normalized_matrix(data.train);
  const Matrix xva = profiles_matrix(data.val), yva = normalized_matrix(data.val);
  const Matrix xte = profiles_matrix(data.test), yte = normalized_matrix(data.test);
  const nn::TrainSet tr{&xtr, nn::regression_objective(ytr)};
  const nn::TrainSet va{&xva, nn::regression_objective(yva)};
  const nn::TrainSet te{&xte, nn::regression_objective(yte)};

  FseTraining out;
  out.report = nn::train(std::move(init), tr, va,
                         {opt.epochs, opt.batch_size, opt.learning_rate, derive_seed(opt.seed, 1)});
  out.model.mlp = out.report.parameters;
  out.model.i_max = data.train.i_max;
  out.model.scene_digest = data.train.scene_digest;
  out.model.dataset_seed = data.train.seed;
  out.model.train_seed = opt.seed;
  out.model.epochs = opt.epochs;
  out.model.learning_rate = opt.learning_rate;
  out.model.batch_size = opt.batch_size;
  out.val_mse = nn::evaluate(out.model.mlp, va);
  out.test_mse = nn::evaluate(out.model.mlp, te);
  return out;
}

inline Intensities fse_predict(const FseModel& model, const PhaseProfile& profile) {
  if (profile.size() != static_cast<std::size_t>(model.column_count()))
    throw InvalidArgument("profile has " + std::to_string(profile.size()) + " columns, model expects " +
                          std::to_string(model.column_count()));
  const Matrix out = nn::forward(model.mlp, encode_profiles({profile}, model.column_count()));
  return Intensities(out.data(), out.data() + out.size());
}

// ---------------------------------------------------------------------------
// Tandem

struct IdeModel {
  nn::Mlp mlp;
  std::string fse_digest;  // parameters of the FSE it was trained through
  QuantizerConfig quantizer;
  double target_low = 0.0;
  double target_high = 0.6;
  std::uint64_t target_seed = 0;
  std::uint64_t train_seed = 0;
  int epochs = 0;
  double learning_rate = 0.0;
  int batch_size = 0;

  int column_count() const { return mlp.output_dim(); }
  int probe_count() const { return mlp.input_dim(); }
};

/// Loss MSE(FSE(encode(soft(wrap(ide_out)))), target) and its gradient with
/// respect to the raw IDE outputs. The FSE is only read.
inline nn::BatchLoss tandem_loss(const Matrix& ide_out, const Matrix& targets, const nn::Mlp& fse,
                                 const QuantizerConfig& q) {
  const Index columns = ide_out.rows(), batch = ide_out.cols();
  if (fse.input_dim() != 2 * columns || fse.output_dim() != targets.rows() || targets.cols() != batch)
    throw InvalidArgument("tandem shapes do not match the FSE");
  Matrix angles(columns, batch), slope(columns, batch), enc(2 * columns, batch);
  for (Index b = 0; b < batch; ++b) {
    for (Index i = 0; i < columns; ++i) {
      const auto sq = quantize_soft_with_derivative(ide_output_to_angle(ide_out(i, b)), q);
      angles(i, b) = sq.degrees;
      slope(i, b) = sq.derivative;
      const double r = deg2rad(sq.degrees);
      enc(2 * i, b) = std::cos(r);
      enc(2 * i + 1, b) = std::sin(r);
    }
  }
  nn::ForwardCache cache;
  const Matrix pred = nn::forward(fse, enc, &cache);
  nn::BatchLoss bl = nn::mse_loss(pred, targets);
  const Matrix g_enc = nn::backward(fse, cache, bl.grad, false).input;
  Matrix g(columns, batch);
  constexpr double kRadPerDeg = std::numbers::pi / 180.0;
  for (Index b = 0; b < batch; ++b) {
    for (Index i = 0; i < columns; ++i) {
      const double r = deg2rad(angles(i, b));
      const double d_angle = (-g_enc(2 * i, b) * std::sin(r) + g_enc(2 * i + 1, b) * std::cos(r)) * kRadPerDeg;
      g(i, b) = d_angle * slope(i, b);
    }
  }
  bl.grad = std::move(g);
  return bl;
}

struct IdeOptions {
  int epochs = 600;
  double learning_rate = 5e-4;
  int batch_size = 256;
  std::uint64_t seed = 0;
  std::vector<int> hidden{50, 50};
  QuantizerConfig quantizer;
  std::optional<nn::Mlp> warm_start;
};

struct IdeTraining {
  IdeModel model;
  nn::TrainReport report;
  double val_mse = 0.0;
  double test_mse = 0.0;  // tandem (soft path) loss on the test targets
};

/// Fits only the IDE; gradients pass through the frozen FSE and quantizer.
inline IdeTraining train_ide(const FseModel& fse, const Split<TargetDataset>& targets, const IdeOptions& opt) {
  opt.quantizer.validate();
  const int probes = fse.probe_count(), columns = fse.column_count();
  if (targets.train.probe_count != probes) throw InvalidArgument("target dimension does not match the FSE");
  std::vector<int> dims{probes};
  dims.insert(dims.end(), opt.hidden.begin(), opt.hidden.end());
  dims.push_back(columns);
  nn::Mlp init = opt.warm_start ? *opt.warm_start : nn::init_mlp(dims, derive_seed(opt.seed, 0));
  if (init.dims != dims) throw InvalidArgument("warm-start network has the wrong shape");

  const Matrix ttr = intensities_matrix(targets.train.targets, probes);
  const Matrix tva = intensities_matrix(targets.val.targets, probes);
  const Matrix tte = intensities_matrix(targets.test.targets, probes);
  auto objective = [&](const Matrix& t) -> nn::Objective {
    return [&t, &fse, &opt](const Matrix& out, std::span<const Index> samples) {
      return tandem_loss(out, t(Eigen::all, std::vector<Index>(samples.begin(), samples.end())), fse.mlp,
                         opt.quantizer);
    };
  };
  const nn::TrainSet tr{&ttr, objective(ttr)}, va{&tva, objective(tva)}, te{&tte, objective(tte)};

  IdeTraining out;
  out.report = nn::train(std::move(init), tr, va,
                         {opt.epochs, opt.batch_size, opt.learning_rate, derive_seed(opt.seed, 1)});
  out.model.mlp = out.report.parameters;
  out.model.fse_digest = mlp_digest(fse.mlp);
  out.model.quantizer = opt.quantizer;
  out.model.target_low = targets.train.low;
  out.model.target_high = targets.train.high;
  out.model.target_seed = targets.train.seed;
  out.model.train_seed = opt.seed;
  out.model.epochs = opt.epochs;
  out.model.learning_rate = opt.learning_rate;
  out.model.batch_size = opt.batch_size;
  out.val_mse = nn::evaluate(out.model.mlp, va);
  out.test_mse = nn::evaluate(out.model.mlp, te);
  return out;
}

/// Deployable profile for a target: IDE -> wrap -> nearest hardware state.
/// Targets outside the training range are reported through `warnings`.
inline PhaseProfile infer_design(const IdeModel& ide, std::span<const double> target,
                                 const WarningSink& warnings = {}) {
  if (target.size() != static_cast<std::size_t>(ide.probe_count())) throw InvalidArgument("target length mismatch");
  for (double v : target) {
    if (std::isnan(v)) throw InvalidArgument("target contains NaN");
    if (v < ide.target_low || v > ide.target_high)
      warn(warnings, "target component " + std::to_string(v) + " outside the training range [" +
                         std::to_string(ide.target_low) + ", " + std::to_string(ide.target_high) + "]");
  }
  nn::Vector t(static_cast<Index>(target.size()));
  for (std::size_t j = 0; j < target.size(); ++j) t(static_cast<Index>(j)) = target[j];
  const nn::Vector raw = nn::forward(ide.mlp, t);
  PhaseProfile p;
  p.reserve(static_cast<std::size_t>(raw.size()));
  for (Index i = 0; i < raw.size(); ++i) p.push_back(quantize_hard(ide_output_to_angle(raw(i))));
  return p;
}

/// FSE output along the training (soft-quantized) path, for a batch of targets.
inline Matrix tandem_predict(const IdeModel& ide, const FseModel& fse, const Matrix& targets) {
  const Matrix raw = nn::forward(ide.mlp, targets);
  Matrix enc(2 * raw.rows(), raw.cols());
  for (Index b = 0; b < raw.cols(); ++b)
    for (Index i = 0; i < raw.rows(); ++i) {
      const double r = deg2rad(quantize_soft(ide_output_to_angle(raw(i, b)), ide.quantizer));
      enc(2 * i, b) = std::cos(r);
      enc(2 * i + 1, b) = std::sin(r);
    }
  return nn::forward(fse.mlp, enc);
}

// ---------------------------------------------------------------------------
// Closed loop

struct EvalRow {
  Intensities target, predicted, measured;
  PhaseProfile profile;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  std::vector<double> predicted_mse;  // per probe, FSE on the deployed profile vs target
  std::vector<double> measured_mse;   // per probe, scene vs target

  double mean_measured_mse() const {
    double s = 0;
    for (double v : measured_mse) s += v;
    return s / static_cast<double>(measured_mse.size());
  }
  double mean_predicted_mse() const {
    double s = 0;
    for (double v : predicted_mse) s += v;
    return s / static_cast<double>(predicted_mse.size());
  }
};

struct EvalOptions {
  unsigned threads = 1;
  std::uint64_t noise_seed = 0;  // per-target measurement noise derives from this
};

inline std::vector<double> per_probe_mse(const std::vector<EvalRow>& rows, Intensities EvalRow::*field) {
  const std::size_t p = rows.front().target.size();
  std::vector<double> m(p, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < p; ++j) {
      const double d = (r.*field)[j] - r.target[j];
      m[j] += d * d;
    }
  for (double& v : m) v /= static_cast<double>(rows.size());
  return m;
}

/// Designs a profile for each target, measures it in `scene` (normalized by
/// the FSE's training i_max) and compares with the target.
inline EvalResult closed_loop_eval(const IdeModel& ide, const FseModel& fse, const Scene& scene,
                                   const std::vector<Intensities>& targets, const EvalOptions& opt = {},
                                   const WarningSink& warnings = {}) {
  if (targets.empty()) throw InvalidArgument("closed-loop evaluation needs at least one target");
  if (scene.column_count != ide.column_count() || static_cast<int>(scene.probe_count()) != ide.probe_count())
    throw InvalidArgument("scene does not match the trained models");
  const ScatterModel model(scene);
  EvalResult res;
  res.rows.resize(targets.size());
  const bool noisy = scene.noise_sigma > 0.0;
  parallel_for(targets.size(), opt.threads, [&](std::size_t i) {
    auto& row = res.rows[i];
    row.target = targets[i];
    row.profile = infer_design(ide, targets[i], warnings);
    row.predicted = fse_predict(fse, row.profile);
    row.measured = noisy ? model.normalized(row.profile, fse.i_max, derive_seed(opt.noise_seed, i))
                         : model.normalized(row.profile, fse.i_max);
  });
  res.predicted_mse = per_probe_mse(res.rows, &EvalRow::predicted);
  res.measured_mse = per_probe_mse(res.rows, &EvalRow::measured);
  return res;
}

/// RMS difference between the soft-path FSE output used in training and the
/// FSE output on the hard-quantized (deployed) profile.
inline double deployment_gap_rms(const IdeModel& ide, const FseModel& fse, const std::vector<Intensities>& targets) {
  const Matrix t = intensities_matrix(targets, ide.probe_count());
  const Matrix soft = tandem_predict(ide, fse, t);
  std::vector<PhaseProfile> profiles;
  profiles.reserve(targets.size());
  for (const auto& v : targets) profiles.push_back(infer_design(ide, v, [](const std::string&) {}));
  const Matrix hard = nn::forward(fse.mlp, encode_profiles(profiles, ide.column_count()));
  return std::sqrt((soft - hard).squaredNorm() / static_cast<double>(soft.size()));
}

// ---------------------------------------------------------------------------
// Model files

inline nlohmann::json fse_to_json(const FseModel& m) {
  auto j = nn::mlp_to_json(m.mlp);
  j["model"] = "forward_scattering_engine";
  j["provenance"] = {{"i_max", m.i_max},
                     {"scene_digest", m.scene_digest},
                     {"dataset_digest", m.dataset_digest},
                     {"dataset_seed", m.dataset_seed},
                     {"train_seed", m.train_seed},
                     {"epochs", m.epochs},
                     {"learning_rate", m.learning_rate},
                     {"batch_size", m.batch_size}};
  return j;
}

inline FseModel fse_from_json(const nlohmann::json& j) {
  if (j.value("model", "") != "forward_scattering_engine") throw ValidationError("not an FSE model file");
  FseModel m;
  m.mlp = nn::mlp_from_json(j);
  const auto& p = j.at("provenance");
  m.i_max = p.at("i_max").get<double>();
  m.scene_digest = p.at("scene_digest").get<std::string>();
  m.dataset_digest = p.at("dataset_digest").get<std::string>();
  m.dataset_seed = p.at("dataset_seed").get<std::uint64_t>();
  m.train_seed = p.at("train_seed").get<std::uint64_t>();
  m.epochs = p.at("epochs").get<int>();
  m.learning_rate = p.at("learning_rate").get<double>();
  m.batch_size = p.at("batch_size").get<int>();
  if (m.mlp.input_dim() % 2 != 0) throw ValidationError("FSE input dim must be even");
  if (!(m.i_max > 0.0)) throw ValidationError("FSE i_max must be positive");
  return m;
}

inline nlohmann::json ide_to_json(const IdeModel& m) {
  auto j = nn::mlp_to_json(m.mlp);
  j["model"] = "inverse_design_engine";
  j["quantizer"] = quantizer_to_json(m.quantizer);
  j["provenance"] = {{"fse_digest", m.fse_digest},
                     {"target_low", m.target_low},
                     {"target_high", m.target_high},
                     {"target_seed", m.target_seed},
                     {"train_seed", m.train_seed},
                     {"epochs", m.epochs},
                     {"learning_rate", m.learning_rate},
                     {"batch_size", m.batch_size}};
  return j;
}

inline IdeModel ide_from_json(const nlohmann::json& j) {
  if (j.value("model", "") != "inverse_design_engine") throw ValidationError("not an IDE model file");
  IdeModel m;
  m.mlp = nn::mlp_from_json(j);
  m.quantizer = quantizer_from_json(j.at("quantizer"));
  const auto& p = j.at("provenance");
  m.fse_digest = p.at("fse_digest").get<std::string>();
  m.target_low = p.at("target_low").get<double>();
  m.target_high = p.at("target_high").get<double>();
  m.target_seed = p.at("target_seed").get<std::uint64_t>();
  m.train_seed = p.at("train_seed").get<std::uint64_t>();
  m.epochs = p.at("epochs").get<int>();
  m.learning_rate = p.at("learning_rate").get<double>();
  m.batch_size = p.at("batch_size").get<int>();
  return m;
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(1) << '\n';
  if (!out) throw Error("write failed: " + path);
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline void save_fse(const FseModel& m, const std::string& path) { write_json(fse_to_json(m), path); }
inline FseModel load_fse(const std::string& path) { return fse_from_json(read_json(path)); }
inline void save_ide(const IdeModel& m, const std::string& path) { write_json(ide_to_json(m), path); }
inline IdeModel load_ide(const std::string& path) { return ide_from_json(read_json(path)); }

}  // namespace rispa
