#pragma once

// Scalar-wave stand-in for the metasurface measurement rig. A feed illuminates
// a line of independently switchable columns; each column re-radiates with the
// complex reflection coefficient of its phase state toward a set of probes.
// An optional obstacle adds single-bounce (Born) scattering through point
// scatterers.

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rispa/digest.hpp"
#include "rispa/errors.hpp"
#include "rispa/random.hpp"

namespace rispa {

using Vec3 = Eigen::Vector3d;
using Complex = std::complex<double>;
using Intensities = std::vector<double>;

inline constexpr int kStateCount = 8;
inline constexpr double kStateStepDegrees = 45.0;
inline constexpr double kSpeedOfLight = 299792458.0;
/// Largest allowed spread of the amplitude table, in dB.
inline constexpr double kMaxAmplitudeSpreadDb = 1.7;

/// One of the eight hardware reflection states; state s has phase s*45 degrees.
class PhaseState {
 public:
  constexpr PhaseState() = default;
  constexpr explicit PhaseState(int index) : index_(static_cast<std::uint8_t>(index)) {
    if (index < 0 || index >= kStateCount) throw InvalidArgument("phase state index out of range 0..7");
  }
  constexpr int index() const noexcept { return index_; }
  constexpr double degrees() const noexcept { return kStateStepDegrees * index_; }
  friend constexpr bool operator==(PhaseState, PhaseState) = default;

 private:
  std::uint8_t index_ = 0;
};

/// One state per column, column 1 first.
using PhaseProfile = std::vector<PhaseState>;

inline PhaseProfile profile_from_indices(std::span<const int> indices) {
  PhaseProfile p;
  p.reserve(indices.size());
  for (int i : indices) p.emplace_back(i);
  return p;
}

inline std::vector<int> profile_indices(const PhaseProfile& p) {
  std::vector<int> out(p.size());
  std::transform(p.begin(), p.end(), out.begin(), [](PhaseState s) { return s.index(); });
  return out;
}

struct Scatterer {
  Vec3 position = Vec3::Zero();
  Complex coefficient{0.0, 0.0};
};

struct Obstacle {
  std::vector<Scatterer> scatterers;
};

/// amplitude_dB(s) = -1.7 s / 7, i.e. a dB-linear ramp spanning exactly 1.7 dB.
inline std::vector<double> default_amplitude_table() {
  std::vector<double> t(kStateCount);
  for (int s = 0; s < kStateCount; ++s) t[s] = std::pow(10.0, -kMaxAmplitudeSpreadDb * s / (7.0 * 20.0));
  return t;
}

struct Scene {
  double frequency = 1.1e10;
  int column_count = 20;
  double column_pitch = 0.0136;
  Vec3 feed_position{0.0, 0.0, 0.5};
  std::vector<Vec3> probe_positions{{-0.3, 0.0, 1.0}, {0.0, 0.0, 1.0}, {0.3, 0.0, 1.0}};
  std::optional<Obstacle> obstacle;
  double noise_sigma = 0.01;
  std::vector<double> amplitude_table = default_amplitude_table();

  double wavelength() const { return kSpeedOfLight / frequency; }
  double wavenumber() const { return 2.0 * std::numbers::pi / wavelength(); }
  std::size_t probe_count() const { return probe_positions.size(); }
};

/// Twelve scatterers evenly spaced (0.2/3 m apart) around the perimeter of a
/// 0.2 m square in the z = 0.5 m plane centred on (0.05, 0, 0.5), starting at
/// the (-x, -y) corner and running counter-clockwise.
inline Obstacle default_obstacle() {
  constexpr double cx = 0.05, cy = 0.0, cz = 0.5, half = 0.1, side = 0.2;
  Obstacle o;
  for (int n = 0; n < 12; ++n) {
    const double s = n * (4.0 * side) / 12.0;
    double x = 0, y = 0;
    if (s < side) {
      x = cx - half + s, y = cy - half;
    } else if (s < 2 * side) {
      x = cx + half, y = cy - half + (s - side);
    } else if (s < 3 * side) {
      x = cx + half - (s - 2 * side), y = cy + half;
    } else {
      x = cx - half, y = cy + half - (s - 3 * side);
    }
    o.scatterers.push_back({Vec3{x, y, cz}, Complex{0.05, 0.0}});
  }
  return o;
}

inline Scene default_scene() { return Scene{}; }

inline Scene default_obstacle_scene() {
  Scene s;
  s.obstacle = default_obstacle();
  return s;
}

/// Column centres along x, symmetric about the origin.
inline std::vector<Vec3> column_positions(const Scene& scene) {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(std::max(scene.column_count, 0)));
  const double centre = (scene.column_count + 1) / 2.0;
  for (int i = 1; i <= scene.column_count; ++i) out.emplace_back((i - centre) * scene.column_pitch, 0.0, 0.0);
  return out;
}

inline double amplitude_spread_db(std::span<const double> table) {
  const auto [lo, hi] = std::minmax_element(table.begin(), table.end());
  return 20.0 * std::log10(*hi / *lo);
}

/// Throws ValidationError describing the first violated invariant.
inline void validate(const Scene& scene) {
  auto fail = [](const std::string& m) { throw ValidationError("invalid scene: " + m); };
  if (!(scene.frequency > 0.0) || !std::isfinite(scene.frequency)) fail("frequency must be positive");
  if (scene.column_count < 1) fail("column_count must be >= 1");
  if (!(scene.column_pitch > 0.0) || !std::isfinite(scene.column_pitch)) fail("column_pitch must be positive");
  if (scene.probe_positions.empty()) fail("at least one probe is required");
  if (!(scene.noise_sigma >= 0.0) || !std::isfinite(scene.noise_sigma)) fail("noise_sigma must be >= 0");
  if (scene.amplitude_table.size() != kStateCount) fail("amplitude_table needs 8 entries");
  for (double a : scene.amplitude_table)
    if (!(a > 0.0 && a <= 1.0)) fail("amplitude_table values must lie in (0, 1]");
  if (amplitude_spread_db(scene.amplitude_table) > kMaxAmplitudeSpreadDb + 1e-9)
    fail("amplitude_table spread exceeds 1.7 dB");
  const auto cols = column_positions(scene);
  for (const auto& p : scene.probe_positions) {
    if (!p.allFinite()) fail("probe position not finite");
    for (const auto& c : cols)
      if (p == c) throw GeometryError("coincident points: probe at a column position");
  }
  if (scene.obstacle) {
    for (const auto& s : scene.obstacle->scatterers) {
      const double m = std::abs(s.coefficient);
      if (!std::isfinite(m) || !(m > 0.0)) fail("scatterer coefficient magnitude must be finite and > 0");
      if (!s.position.allFinite()) fail("scatterer position not finite");
    }
  }
}

/// Outgoing spherical wave exp(-jk|a-b|)/|a-b|.
inline Complex green(double k, const Vec3& a, const Vec3& b) {
  const double r = (a - b).norm();
  if (r == 0.0) throw GeometryError("coincident points");
  return std::polar(1.0 / r, -k * r);
}

/// Scene compiled into per-(column, probe) transfer coefficients so a profile
/// evaluates in O(columns * probes).
class ScatterModel {
 public:
  explicit ScatterModel(const Scene& scene) : scene_(scene) {
    validate(scene_);
    const double k = scene_.wavenumber();
    const auto cols = column_positions(scene_);
    const std::size_t n = cols.size(), p = scene_.probe_count();
    transfer_.assign(n * p, Complex{});
    for (std::size_t i = 0; i < n; ++i) {
      const Complex illum = green(k, scene_.feed_position, cols[i]);
      for (std::size_t j = 0; j < p; ++j) {
        Complex path = green(k, cols[i], scene_.probe_positions[j]);
        if (scene_.obstacle) {
          for (const auto& s : scene_.obstacle->scatterers)
            path += green(k, cols[i], s.position) * s.coefficient * green(k, s.position, scene_.probe_positions[j]);
        }
        transfer_[i * p + j] = illum * path;
      }
    }
    for (int s = 0; s < kStateCount; ++s)
      reflection_[s] = std::polar(scene_.amplitude_table[s], PhaseState(s).degrees() * std::numbers::pi / 180.0);
  }

  const Scene& scene() const noexcept { return scene_; }

  /// Unnormalized |E|^2 at every probe. With a seed, each value is scaled by
  /// (1 + sigma n), n ~ N(0,1), and clamped at zero.
  Intensities raw(const PhaseProfile& profile, std::optional<std::uint64_t> noise_seed = std::nullopt) const {
    if (profile.size() != static_cast<std::size_t>(scene_.column_count))
      throw InvalidArgument("profile length " + std::to_string(profile.size()) + " != column count " +
                            std::to_string(scene_.column_count));
    const std::size_t p = scene_.probe_count();
    std::vector<Complex> field(p, Complex{});
    for (std::size_t i = 0; i < profile.size(); ++i) {
      const Complex r = reflection_[profile[i].index()];
      for (std::size_t j = 0; j < p; ++j) field[j] += r * transfer_[i * p + j];
    }
    Intensities out(p);
    for (std::size_t j = 0; j < p; ++j) out[j] = std::norm(field[j]);
    if (noise_seed) {
      Rng rng(*noise_seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& v : out) v = std::max(0.0, v * (1.0 + scene_.noise_sigma * normal(rng)));
    }
    return out;
  }

  Intensities normalized(const PhaseProfile& profile, double i_max,
                         std::optional<std::uint64_t> noise_seed = std::nullopt) const {
    if (!(i_max > 0.0)) throw InvalidArgument("i_max must be positive");
    auto v = raw(profile, noise_seed);
    for (double& x : v) x /= i_max;
    return v;
  }

 private:
  Scene scene_;
  std::vector<Complex> transfer_;
  std::array<Complex, kStateCount> reflection_{};
};

inline Intensities simulate_raw(const Scene& scene, const PhaseProfile& profile,
                                std::optional<std::uint64_t> noise_seed = std::nullopt) {
  return ScatterModel(scene).raw(profile, noise_seed);
}

inline Intensities simulate(const Scene& scene, const PhaseProfile& profile, double i_max,
                            std::optional<std::uint64_t> noise_seed = std::nullopt) {
  if (!(i_max > 0.0)) throw InvalidArgument("i_max must be positive");
  return ScatterModel(scene).normalized(profile, i_max, noise_seed);
}

// ---------------------------------------------------------------------------
// Scene config file (JSON object). Missing keys keep their defaults; unknown
// keys are rejected.

namespace detail {

inline nlohmann::json vec3_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 json_vec3(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(key, "expected [x, y, z]");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ConfigError(key, "expected numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

inline double json_number(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key, "expected a number");
  return j.get<double>();
}

}  // namespace detail

inline nlohmann::json scene_to_json(const Scene& s) {
  using nlohmann::json;
  json j;
  j["frequency_hz"] = s.frequency;
  j["column_count"] = s.column_count;
  j["column_pitch_m"] = s.column_pitch;
  j["feed_position_m"] = detail::vec3_json(s.feed_position);
  j["probe_positions_m"] = json::array();
  for (const auto& p : s.probe_positions) j["probe_positions_m"].push_back(detail::vec3_json(p));
  j["noise_sigma"] = s.noise_sigma;
  j["amplitude_table"] = s.amplitude_table;
  if (s.obstacle) {
    json sc = json::array();
    for (const auto& q : s.obstacle->scatterers)
      sc.push_back({{"position_m", detail::vec3_json(q.position)},
                    {"coefficient", json::array({q.coefficient.real(), q.coefficient.imag()})}});
    j["obstacle"] = {{"scatterers", sc}};
  }
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
  Scene s;
  for (const auto& [key, v] : j.items()) {
    if (key == "frequency_hz") {
      s.frequency = detail::json_number(v, key);
    } else if (key == "column_count") {
      if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
      s.column_count = v.get<int>();
    } else if (key == "column_pitch_m") {
      s.column_pitch = detail::json_number(v, key);
    } else if (key == "feed_position_m") {
      s.feed_position = detail::json_vec3(v, key);
    } else if (key == "probe_positions_m") {
      if (!v.is_array()) throw ConfigError(key, "expected a list of [x, y, z]");
      s.probe_positions.clear();
      for (const auto& p : v) s.probe_positions.push_back(detail::json_vec3(p, key));
    } else if (key == "noise_sigma") {
      s.noise_sigma = detail::json_number(v, key);
    } else if (key == "amplitude_table") {
      if (!v.is_array()) throw ConfigError(key, "expected a list of 8 numbers");
      s.amplitude_table.clear();
      for (const auto& a : v) s.amplitude_table.push_back(detail::json_number(a, key));
    } else if (key == "obstacle") {
      if (v.is_null()) continue;
      if (!v.is_object() || !v.contains("scatterers") || !v["scatterers"].is_array())
        throw ConfigError(key, "expected {\"scatterers\": [...]}");
      Obstacle o;
      for (const auto& q : v["scatterers"]) {
        const std::string qk = "obstacle.scatterers";
        if (!q.is_object() || !q.contains("position_m") || !q.contains("coefficient"))
          throw ConfigError(qk, "each scatterer needs position_m and coefficient");
        const auto& c = q["coefficient"];
        if (!c.is_array() || c.size() != 2) throw ConfigError(qk + ".coefficient", "expected [re, im]");
        o.scatterers.push_back({detail::json_vec3(q["position_m"], qk + ".position_m"),
                                Complex{detail::json_number(c[0], qk), detail::json_number(c[1], qk)}});
      }
      s.obstacle = std::move(o);
    } else {
      throw ConfigError(key, "unknown key");
    }
  }
  try {
    validate(s);
  } catch (const ValidationError& e) {
    throw ConfigError("<scene>", e.what());
  }
  return s;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--scene", "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<syntax>", path + ": " + e.what());
  }
  return scene_from_json(j);
}

inline void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << scene_to_json(scene).dump(2) << '\n';
}

/// SHA-256 of the canonical (compact, sorted-key) JSON form of the scene, so
/// formatting differences in the config file do not change the digest.
inline std::string scene_digest(const Scene& scene) { return sha256_hex(scene_to_json(scene).dump()); }

}  // namespace rispa
