#pragma once

// Phase discretization onto the eight hardware states.
//
// quantize_hard is the deployment rule. quantize_soft is a smooth stand-in
// used inside the tandem network: a circular softmax over the state centres,
//   w_s ∝ exp(cos(angle - phi_s) / tau),   output = arg(sum_s w_s e^{j phi_s}),
// which approaches quantize_hard as tau -> 0 and is differentiable everywhere.

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <numbers>

#include "rispa/errors.hpp"
#include "rispa/scene.hpp"

namespace rispa {

struct QuantizerConfig {
  int state_count = kStateCount;
  double step_degrees = kStateStepDegrees;
  double temperature_degrees = 10.0;

  void validate() const {
    if (state_count != kStateCount || step_degrees != kStateStepDegrees)
      throw InvalidArgument("quantizer must use 8 states of 45 degrees");
    if (!(temperature_degrees > 0.0) || !std::isfinite(temperature_degrees))
      throw InvalidArgument("quantizer temperature must be positive");
  }
};

inline nlohmann::json quantizer_to_json(const QuantizerConfig& q) {
  return {{"state_count", q.state_count}, {"step_degrees", q.step_degrees},
          {"temperature_degrees", q.temperature_degrees}};
}

inline QuantizerConfig quantizer_from_json(const nlohmann::json& j) {
  QuantizerConfig q;
  q.state_count = j.at("state_count").get<int>();
  q.step_degrees = j.at("step_degrees").get<double>();
  q.temperature_degrees = j.at("temperature_degrees").get<double>();
  q.validate();
  return q;
}

inline constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Reduces any finite angle to [0, 360).
inline double wrap_degrees(double angle) {
  double a = std::fmod(angle, 360.0);
  if (a < 0.0) a += 360.0;
  if (a >= 360.0) a -= 360.0;
  return a;
}

/// Nearest state under cyclic distance; exact ties go to the higher index (mod 8).
inline PhaseState quantize_hard(double angle_degrees) {
  const double a = wrap_degrees(angle_degrees);
  const int idx = static_cast<int>(std::floor(a / kStateStepDegrees + 0.5)) % kStateCount;
  return PhaseState(idx);
}

struct SoftQuantized {
  double degrees;     // in [0, 360)
  double derivative;  // d(output)/d(angle)
};

inline SoftQuantized quantize_soft_with_derivative(double angle_degrees, const QuantizerConfig& cfg = {}) {
  const double tau = deg2rad(cfg.temperature_degrees);
  const double theta = deg2rad(angle_degrees);
  std::array<double, kStateCount> c{}, s{}, cosd{};
  double top = -2.0;
  for (int k = 0; k < kStateCount; ++k) {
    const double centre = deg2rad(k * kStateStepDegrees);
    c[k] = std::cos(centre);
    s[k] = std::sin(centre);
    cosd[k] = std::cos(theta - centre);
    top = std::max(top, cosd[k]);
  }
  // Unnormalized weights; the common factor does not change the argument.
  double re = 0, im = 0, dre = 0, dim = 0;
  for (int k = 0; k < kStateCount; ++k) {
    const double centre = deg2rad(k * kStateStepDegrees);
    const double w = std::exp((cosd[k] - top) / tau);
    const double dw = -w * std::sin(theta - centre) / tau;
    re += w * c[k];
    im += w * s[k];
    dre += dw * c[k];
    dim += dw * s[k];
  }
  const double norm2 = re * re + im * im;
  return {wrap_degrees(rad2deg(std::atan2(im, re))), (re * dim - im * dre) / norm2};
}

inline double quantize_soft(double angle_degrees, const QuantizerConfig& cfg = {}) {
  return quantize_soft_with_derivative(angle_degrees, cfg).degrees;
}

/// Raw inverse-network outputs are read directly as degrees and wrapped;
/// the wrap has unit slope almost everywhere.
inline double ide_output_to_angle(double raw) { return wrap_degrees(raw); }

inline std::vector<double> ide_output_to_angles(std::span<const double> raw) {
  std::vector<double> out(raw.size());
  std::transform(raw.begin(), raw.end(), out.begin(), ide_output_to_angle);
  return out;
}

}  // namespace rispa
