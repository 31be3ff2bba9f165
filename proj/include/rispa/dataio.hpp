#pragma once

// Measurement and target datasets: generation, splitting, JSON-lines files.
//
// File layout: line 1 is a header object, every following line one record.
//   scatter: {"kind":"scatter_dataset","format_version":1,"count":N,"i_max":..,
//             "seed":..,"scene_digest":"..","column_count":20,"probe_count":3}
//            {"states":[0..7 x columns],"raw":[..],"normalized":[..]}
//   targets: {"kind":"target_dataset","format_version":1,"count":N,"low":..,
//             "high":..,"seed":..,"probe_count":3}
//            {"target":[..]}

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rispa/errors.hpp"
#include "rispa/parallel.hpp"
#include "rispa/random.hpp"
#include "rispa/scene.hpp"

namespace rispa {

inline constexpr int kDatasetFormatVersion = 1;

struct ScatterRecord {
  PhaseProfile profile;
  Intensities raw;
  Intensities normalized;
  friend bool operator==(const ScatterRecord&, const ScatterRecord&) = default;
};

struct ScatterDataset {
  std::vector<ScatterRecord> records;
  double i_max = 1.0;
  std::uint64_t seed = 0;
  std::string scene_digest;
  int column_count = 0;
  int probe_count = 0;

  std::size_t size() const { return records.size(); }
  friend bool operator==(const ScatterDataset&, const ScatterDataset&) = default;
};

struct TargetDataset {
  std::vector<Intensities> targets;
  double low = 0.0;
  double high = 0.6;
  std::uint64_t seed = 0;
  int probe_count = 3;

  std::size_t size() const { return targets.size(); }
  friend bool operator==(const TargetDataset&, const TargetDataset&) = default;
};

/// Largest raw value over all records and probes.
inline double max_raw(const ScatterDataset& d) {
  double m = 0.0;
  for (const auto& r : d.records)
    for (double v : r.raw) m = std::max(m, v);
  return m;
}

/// Sets i_max and recomputes normalized = raw / i_max.
inline void apply_normalization(ScatterDataset& d, double i_max) {
  if (!(i_max > 0.0) || !std::isfinite(i_max)) throw InvalidArgument("i_max must be positive and finite");
  d.i_max = i_max;
  for (auto& r : d.records) {
    r.normalized.resize(r.raw.size());
    for (std::size_t j = 0; j < r.raw.size(); ++j) r.normalized[j] = r.raw[j] / i_max;
  }
}

inline PhaseProfile random_profile(int columns, std::uint64_t seed) {
  Rng rng(seed);
  PhaseProfile p;
  p.reserve(static_cast<std::size_t>(columns));
  for (int i = 0; i < columns; ++i) p.emplace_back(static_cast<int>(rng() >> 61));
  return p;
}

struct CollectOptions {
  unsigned threads = 1;
  /// Normalize against this constant instead of the collection's own maximum
  /// (re-collection in a changed scene keeps the original scale).
  std::optional<double> reference_i_max;
};

/// Draws `count` uniform random profiles and measures them. Record i uses
/// seeds derived from (seed, i) for both its profile and its noise, so the
/// output does not depend on the thread count.
inline ScatterDataset collect(const Scene& scene, std::size_t count, std::uint64_t seed,
                              const CollectOptions& opt = {}) {
  if (count < 1) throw InvalidArgument("collect needs count >= 1");
  const ScatterModel model(scene);
  ScatterDataset d;
  d.seed = seed;
  d.scene_digest = scene_digest(scene);
  d.column_count = scene.column_count;
  d.probe_count = static_cast<int>(scene.probe_count());
  d.records.resize(count);
  const bool noisy = scene.noise_sigma > 0.0;
  parallel_for(count, opt.threads, [&](std::size_t i) {
    auto& r = d.records[i];
    r.profile = random_profile(scene.column_count, derive_seed(seed, 2 * i));
    r.raw = noisy ? model.raw(r.profile, derive_seed(seed, 2 * i + 1)) : model.raw(r.profile);
  });
  const double m = opt.reference_i_max.value_or(max_raw(d));
  if (!(m > 0.0)) throw ValidationError("all collected intensities are zero");
  apply_normalization(d, m);
  return d;
}

/// Fraction of normalized values below `level`, per probe.
inline std::vector<double> fraction_below(const ScatterDataset& d, double level) {
  std::vector<double> f(static_cast<std::size_t>(d.probe_count), 0.0);
  for (const auto& r : d.records)
    for (std::size_t j = 0; j < f.size(); ++j) f[j] += r.normalized[j] < level ? 1.0 : 0.0;
  for (double& v : f) v /= static_cast<double>(std::max<std::size_t>(d.size(), 1));
  return f;
}

inline TargetDataset generate_targets(std::size_t count, double low, double high, std::uint64_t seed,
                                      int probe_count = 3) {
  if (!(low < high)) throw InvalidArgument("target range needs low < high");
  if (count < 1) throw InvalidArgument("generate_targets needs count >= 1");
  if (probe_count < 1) throw InvalidArgument("probe_count must be >= 1");
  TargetDataset t;
  t.low = low;
  t.high = high;
  t.seed = seed;
  t.probe_count = probe_count;
  Rng rng(seed);
  t.targets.resize(count, Intensities(static_cast<std::size_t>(probe_count)));
  for (auto& target : t.targets)
    for (double& v : target) v = std::min(high, low + (high - low) * uniform01(rng));
  return t;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  double train_fraction = 0.81;
  double val_fraction = 0.09;
  double test_fraction = 0.10;

  void validate() const {
    if (!(train_fraction > 0 && val_fraction > 0 && test_fraction > 0))
      throw InvalidArgument("split fractions must be positive");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
      throw InvalidArgument("split fractions must sum to 1");
  }
};

/// 8100/900/1000 of 10000 measurements.
inline constexpr SplitSpec kMeasurementSplit{0.81, 0.09, 0.10};
/// 40500/4500/3000 of 48000 targets.
inline constexpr SplitSpec kTargetSplit{0.84375, 0.09375, 0.0625};

/// round(fraction * n) for train and validation; test takes the remainder.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  if (n < 3) throw InvalidArgument("split needs at least 3 records");
  const auto train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  const auto val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(n)));
  if (train == 0 || val == 0 || train + val >= n) throw InvalidArgument("split produces an empty partition");
  return {train, val, n - train - val};
}

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle of 0..n-1, then contiguous cuts.
inline SplitIndices split_indices(std::size_t n, const SplitSpec& spec, std::uint64_t seed) {
  const auto sizes = split_sizes(n, spec);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
               order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), order.end());
  return s;
}

template <typename Dataset>
struct Split {
  Dataset train, val, test;
};

inline ScatterDataset subset(const ScatterDataset& d, const std::vector<std::size_t>& idx) {
  ScatterDataset out = d;
  out.records.clear();
  for (std::size_t i : idx) out.records.push_back(d.records.at(i));
  return out;
}

inline TargetDataset subset(const TargetDataset& d, const std::vector<std::size_t>& idx) {
  TargetDataset out = d;
  out.targets.clear();
  for (std::size_t i : idx) out.targets.push_back(d.targets.at(i));
  return out;
}

template <typename Dataset>
Split<Dataset> split(const Dataset& d, const SplitSpec& spec, std::uint64_t seed) {
  const auto idx = split_indices(d.size(), spec, seed);
  return {subset(d, idx.train), subset(d, idx.val), subset(d, idx.test)};
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline nlohmann::json parse_line(const std::string& path, std::size_t line_no, const std::string& line) {
  try {
    auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw ParseError(path, line_no, "expected a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, line_no, std::string("malformed JSON: ") + e.what());
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& path, std::size_t line_no) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(path, line_no, std::string("missing or invalid field '") + key + "'");
  }
}

/// Reads header + records, checking the record count against the header.
template <typename OnRecord>
nlohmann::json read_jsonl(const std::string& path, const std::string& kind, OnRecord&& on_record) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing header line");
  auto header = parse_line(path, 1, line);
  if (header.value("kind", "") != kind) throw ParseError(path, 1, "expected kind '" + kind + "'");
  if (header.value("format_version", 0) != kDatasetFormatVersion) throw ParseError(path, 1, "unsupported format_version");
  const auto count = field<std::size_t>(header, "count", path, 1);
  std::size_t line_no = 1;
  for (std::size_t i = 0; i < count; ++i) {
    ++line_no;
    if (!std::getline(in, line))
      throw ParseError(path, line_no, "file truncated: expected " + std::to_string(count) + " records, found " +
                                          std::to_string(i));
    on_record(parse_line(path, line_no, line), line_no);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty()) throw ParseError(path, line_no, "unexpected content after the last record");
  }
  return header;
}

inline void write_lines(const std::string& path, const nlohmann::json& header, const std::vector<nlohmann::json>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << header.dump() << '\n';
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw Error("write failed: " + path);
}

}  // namespace detail

inline void save_dataset(const ScatterDataset& d, const std::string& path) {
  nlohmann::json header = {{"kind", "scatter_dataset"},   {"format_version", kDatasetFormatVersion},
                           {"count", d.size()},           {"i_max", d.i_max},
                           {"seed", d.seed},              {"scene_digest", d.scene_digest},
                           {"column_count", d.column_count}, {"probe_count", d.probe_count}};
  std::vector<nlohmann::json> rows;
  rows.reserve(d.size());
  for (const auto& r : d.records)
    rows.push_back({{"states", profile_indices(r.profile)}, {"raw", r.raw}, {"normalized", r.normalized}});
  detail::write_lines(path, header, rows);
}

/// Loads and validates a measurement dataset. With `scene`, profile lengths are
/// checked against its column count and a digest mismatch is reported through
/// `warnings`.
inline ScatterDataset load_dataset(const std::string& path, const Scene* scene = nullptr,
                                   const WarningSink& warnings = {}) {
  ScatterDataset d;
  std::vector<std::size_t> lines;
  const auto header = detail::read_jsonl(path, "scatter_dataset", [&](const nlohmann::json& j, std::size_t line_no) {
    ScatterRecord r;
    const auto states = detail::field<std::vector<int>>(j, "states", path, line_no);
    try {
      r.profile = profile_from_indices(states);
    } catch (const InvalidArgument& e) {
      throw ParseError(path, line_no, e.what());
    }
    r.raw = detail::field<std::vector<double>>(j, "raw", path, line_no);
    r.normalized = detail::field<std::vector<double>>(j, "normalized", path, line_no);
    d.records.push_back(std::move(r));
    lines.push_back(line_no);
  });
  d.i_max = detail::field<double>(header, "i_max", path, 1);
  d.seed = detail::field<std::uint64_t>(header, "seed", path, 1);
  d.scene_digest = detail::field<std::string>(header, "scene_digest", path, 1);
  d.column_count = detail::field<int>(header, "column_count", path, 1);
  d.probe_count = detail::field<int>(header, "probe_count", path, 1);
  if (d.records.empty()) throw ValidationError(path + ": dataset has no records");
  if (!(d.i_max > 0.0)) throw ValidationError(path + ": i_max must be positive");

  const int columns = scene ? scene->column_count : d.column_count;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    const std::string where = path + ":" + std::to_string(lines[i]) + ": ";
    if (r.profile.size() != static_cast<std::size_t>(columns))
      throw ValidationError(where + "profile has " + std::to_string(r.profile.size()) + " states, expected " +
                            std::to_string(columns) + " columns");
    if (r.raw.size() != static_cast<std::size_t>(d.probe_count) || r.normalized.size() != r.raw.size())
      throw ValidationError(where + "intensity count does not match probe_count");
    for (std::size_t j = 0; j < r.raw.size(); ++j)
      if (r.normalized[j] != r.raw[j] / d.i_max) throw ValidationError(where + "normalized != raw / i_max");
  }
  if (scene) {
    if (d.probe_count != static_cast<int>(scene->probe_count()))
      throw ValidationError(path + ": dataset probe count does not match the scene");
    if (d.scene_digest != scene_digest(*scene))
      warn(warnings, path + ": scene digest " + d.scene_digest + " does not match the current scene");
  }
  return d;
}

inline void save_targets(const TargetDataset& t, const std::string& path) {
  nlohmann::json header = {{"kind", "target_dataset"}, {"format_version", kDatasetFormatVersion},
                           {"count", t.size()},        {"low", t.low},
                           {"high", t.high},           {"seed", t.seed},
                           {"probe_count", t.probe_count}};
  std::vector<nlohmann::json> rows;
  rows.reserve(t.size());
  for (const auto& v : t.targets) rows.push_back({{"target", v}});
  detail::write_lines(path, header, rows);
}

inline TargetDataset load_targets(const std::string& path) {
  TargetDataset t;
  const auto header = detail::read_jsonl(path, "target_dataset", [&](const nlohmann::json& j, std::size_t line_no) {
    t.targets.push_back(detail::field<std::vector<double>>(j, "target", path, line_no));
  });
  t.low = detail::field<double>(header, "low", path, 1);
  t.high = detail::field<double>(header, "high", path, 1);
  t.seed = detail::field<std::uint64_t>(header, "seed", path, 1);
  t.probe_count = detail::field<int>(header, "probe_count", path, 1);
  if (t.targets.empty()) throw ValidationError(path + ": target dataset has no records");
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& v = t.targets[i];
    const std::string where = path + ":" + std::to_string(i + 2) + ": ";
    if (v.size() != static_cast<std::size_t>(t.probe_count)) throw ValidationError(where + "wrong target length");
    for (double x : v)
      if (!(x >= t.low && x <= t.high)) throw ValidationError(where + "target component outside [low, high]");
  }
  return t;
}

}  // namespace rispa
