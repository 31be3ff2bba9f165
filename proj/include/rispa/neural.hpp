#pragma once

// Fully connected networks with ELU hidden layers and a linear output layer,
// trained by minibatch Adam. Samples are stored column-wise: a batch is a
// (features x batch) matrix.

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rispa/errors.hpp"
#include "rispa/random.hpp"

namespace rispa::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct Layer {
  Matrix weight;  // fan_out x fan_in
  Vector bias;    // fan_out
};

struct Mlp {
  std::vector<int> dims;
  std::vector<Layer> layers;

  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }
  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.dims != b.dims || a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i)
      if (a.layers[i].weight != b.layers[i].weight || a.layers[i].bias != b.layers[i].bias) return false;
    return true;
  }
};

inline void validate_dims(std::span<const int> dims) {
  if (dims.size() < 2) throw InvalidArgument("network needs at least two layer dims");
  for (int d : dims)
    if (d <= 0) throw InvalidArgument("layer dims must be positive");
}

inline void validate(const Mlp& mlp) {
  validate_dims(mlp.dims);
  if (mlp.layers.size() + 1 != mlp.dims.size()) throw ValidationError("layer count does not match dims");
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& l = mlp.layers[i];
    if (l.weight.rows() != mlp.dims[i + 1] || l.weight.cols() != mlp.dims[i] || l.bias.size() != mlp.dims[i + 1])
      throw ValidationError("layer " + std::to_string(i) + " shape does not match dims");
    if (!l.weight.allFinite() || !l.bias.allFinite())
      throw ValidationError("layer " + std::to_string(i) + " has non-finite parameters");
  }
}

/// Glorot-uniform weights, zero biases.
inline Mlp init_mlp(std::vector<int> dims, std::uint64_t seed) {
  validate_dims(dims);
  Rng rng(seed);
  Mlp mlp;
  mlp.dims = std::move(dims);
  for (std::size_t i = 0; i + 1 < mlp.dims.size(); ++i) {
    const int fan_in = mlp.dims[i], fan_out = mlp.dims[i + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Layer l{Matrix(fan_out, fan_in), Vector::Zero(fan_out)};
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = limit * (2.0 * uniform01(rng) - 1.0);
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

inline double elu(double x) { return x >= 0.0 ? x : std::expm1(x); }
inline double elu_derivative(double x) { return x >= 0.0 ? 1.0 : std::exp(x); }

/// Per-layer values kept for the backward pass. activations[0] is the input;
/// pre[i] is the affine output of layer i.
struct ForwardCache {
  std::vector<Matrix> activations;
  std::vector<Matrix> pre;
};

inline Matrix forward(const Mlp& mlp, const Matrix& input, ForwardCache* cache = nullptr) {
  if (input.rows() != mlp.input_dim())
    throw InvalidArgument("input has " + std::to_string(input.rows()) + " features, network expects " +
                          std::to_string(mlp.input_dim()));
  if (cache) {
    cache->activations.assign(1, input);
    cache->pre.clear();
  }
  Matrix x = input;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& l = mlp.layers[i];
    Matrix z = l.weight * x;
    z.colwise() += l.bias;
    const bool hidden = i + 1 < mlp.layers.size();
    if (cache) cache->pre.push_back(z);
    x = hidden ? Matrix(z.unaryExpr([](double v) { return elu(v); })) : std::move(z);
    if (cache && hidden) cache->activations.push_back(x);
  }
  return x;
}

inline Vector forward(const Mlp& mlp, const Vector& input) { return forward(mlp, Matrix(input)).col(0); }

struct Gradients {
  std::vector<Layer> layers;  // same shapes as the network
  Matrix input;               // d loss / d input, per sample column
};

/// Reverse-mode pass through a cached forward evaluation. grad_output holds
/// d loss / d output for each sample column; parameter gradients are summed
/// over the columns. With parameter_grads = false only the input gradient is
/// produced (frozen networks).
inline Gradients backward(const Mlp& mlp, const ForwardCache& cache, const Matrix& grad_output,
                          bool parameter_grads = true) {
  const std::size_t n = mlp.layers.size();
  if (cache.pre.size() != n || cache.activations.size() != n)
    throw InvalidArgument("forward cache does not match network");
  if (grad_output.rows() != mlp.output_dim() || grad_output.cols() != cache.activations[0].cols())
    throw InvalidArgument("output gradient shape mismatch");
  Gradients g;
  g.layers.resize(n);
  Matrix delta = grad_output;
  for (std::size_t k = n; k-- > 0;) {
    if (k + 1 < n) delta.array() *= cache.pre[k].unaryExpr([](double v) { return elu_derivative(v); }).array();
    if (parameter_grads) {
      g.layers[k].weight.noalias() = delta * cache.activations[k].transpose();
      g.layers[k].bias = delta.rowwise().sum();
    }
    Matrix upstream = mlp.layers[k].weight.transpose() * delta;
    delta = std::move(upstream);
  }
  g.input = std::move(delta);
  return g;
}

inline Gradients backward(const Mlp& mlp, const Vector& input, const Vector& grad_output) {
  ForwardCache cache;
  forward(mlp, Matrix(input), &cache);
  return backward(mlp, cache, Matrix(grad_output));
}

inline double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("mse needs equal, non-empty lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// d mse(a, b) / d a.
inline std::vector<double> mse_gradient(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("mse needs equal, non-empty lengths");
  std::vector<double> g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = 2.0 * (a[i] - b[i]) / static_cast<double>(a.size());
  return g;
}

struct BatchLoss {
  double loss = 0.0;
  Matrix grad;  // d loss / d prediction
};

/// Mean over every element of the batch, matching the per-sample mse averaged
/// over samples.
inline BatchLoss mse_loss(const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols() || prediction.size() == 0)
    throw InvalidArgument("mse needs equal, non-empty shapes");
  const Matrix diff = prediction - target;
  const double n = static_cast<double>(diff.size());
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

// ---------------------------------------------------------------------------
// Adam

/// Raised for a non-finite gradient or loss. For training failures the
/// partial loss history is attached.
class Diverged : public Error {
 public:
  explicit Diverged(const std::string& what, std::vector<double> train_history = {},
                    std::vector<double> val_history = {})
      : Error("diverged: " + what), train_(std::move(train_history)), val_(std::move(val_history)) {}
  const std::vector<double>& train_history() const noexcept { return train_; }
  const std::vector<double>& val_history() const noexcept { return val_; }

 private:
  std::vector<double> train_, val_;
};

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step_count = 0;
  std::vector<Vector> first_moment;   // one entry per parameter block
  std::vector<Vector> second_moment;
};

/// One bias-corrected Adam update over parallel lists of parameter and
/// gradient blocks. Moments are allocated on the first call.
inline void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                      AdamState& state) {
  if (params.size() != grads.size()) throw InvalidArgument("parameter/gradient block count mismatch");
  if (!(state.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size()) throw InvalidArgument("parameter/gradient block size mismatch");
    for (double g : grads[b])
      if (!std::isfinite(g)) throw Diverged("non-finite gradient");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Vector::Zero(static_cast<Index>(p.size())));
      state.second_moment.push_back(Vector::Zero(static_cast<Index>(p.size())));
    }
  }
  if (state.first_moment.size() != params.size()) throw InvalidArgument("Adam state does not match parameters");
  ++state.step_count;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t b = 0; b < params.size(); ++b) {
    Eigen::Map<Vector> p(params[b].data(), static_cast<Index>(params[b].size()));
    Eigen::Map<const Vector> g(grads[b].data(), static_cast<Index>(grads[b].size()));
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
    p.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

inline void adam_step(Mlp& mlp, const Gradients& grads, AdamState& state) {
  if (grads.layers.size() != mlp.layers.size()) throw InvalidArgument("gradient does not match network");
  std::vector<std::span<double>> p;
  std::vector<std::span<const double>> g;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    auto& l = mlp.layers[i];
    const auto& gl = grads.layers[i];
    if (gl.weight.rows() != l.weight.rows() || gl.weight.cols() != l.weight.cols() || gl.bias.size() != l.bias.size())
      throw InvalidArgument("gradient shape mismatch in layer " + std::to_string(i));
    p.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    p.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    g.emplace_back(gl.weight.data(), static_cast<std::size_t>(gl.weight.size()));
    g.emplace_back(gl.bias.data(), static_cast<std::size_t>(gl.bias.size()));
  }
  adam_step(p, g, state);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
  int epochs = 1000;
  int batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> train_loss;  // sample-weighted mean of the epoch's minibatch losses
  std::vector<double> val_loss;
  Mlp parameters;                  // best-validation snapshot
  int best_epoch = -1;             // -1 when no epoch ran
  double elapsed_seconds = 0.0;
  std::uint64_t seed = 0;
};

/// Loss of a batch of network outputs. `samples` are the column indices (into
/// the dataset's input matrix) that produced each output column.
using Objective = std::function<BatchLoss(const Matrix& outputs, std::span<const Index> samples)>;

struct TrainSet {
  const Matrix* inputs = nullptr;  // features x samples
  Objective objective;
  Index size() const { return inputs ? inputs->cols() : 0; }
};

/// Evaluates the objective over a whole set in fixed-size chunks; returns the
/// sample-weighted mean loss.
inline double evaluate(const Mlp& mlp, const TrainSet& set, Index chunk = 4096) {
  const Index n = set.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  std::vector<Index> idx;
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    idx.resize(static_cast<std::size_t>(len));
    std::iota(idx.begin(), idx.end(), start);
    const Matrix out = forward(mlp, Matrix(set.inputs->middleCols(start, len)));
    total += set.objective(out, idx).loss * static_cast<double>(len);
  }
  return total / static_cast<double>(n);
}

/// Minibatch Adam over seeded per-epoch shuffles. Returns the parameters with
/// the lowest validation loss (training loss when there is no validation set).
inline TrainReport train(Mlp mlp, const TrainSet& train_set, const TrainSet& val_set, const TrainOptions& opt) {
  validate(mlp);
  if (train_set.size() == 0) throw InvalidArgument("training set is empty");
  if (opt.epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (opt.batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  TrainReport report;
  report.seed = opt.seed;
  report.parameters = mlp;
  AdamState adam;
  adam.learning_rate = opt.learning_rate;
  Rng rng(opt.seed);
  const Index n = train_set.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  double best = std::numeric_limits<double>::infinity();
  ForwardCache cache;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (Index start = 0; start < n; start += opt.batch_size) {
      const Index len = std::min<Index>(opt.batch_size, n - start);
      const std::span<const Index> batch(order.data() + start, static_cast<std::size_t>(len));
      const Matrix x = (*train_set.inputs)(Eigen::all, std::vector<Index>(batch.begin(), batch.end()));
      const Matrix out = forward(mlp, x, &cache);
      const BatchLoss bl = train_set.objective(out, batch);
      if (!std::isfinite(bl.loss)) throw Diverged("non-finite training loss", report.train_loss, report.val_loss);
      epoch_loss += bl.loss * static_cast<double>(len);
      try {
        adam_step(mlp, backward(mlp, cache, bl.grad), adam);
      } catch (const Diverged&) {
        throw Diverged("non-finite gradient", report.train_loss, report.val_loss);
      }
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(n));
    const double val = val_set.size() > 0 ? evaluate(mlp, val_set) : report.train_loss.back();
    if (!std::isfinite(val)) throw Diverged("non-finite validation loss", report.train_loss, report.val_loss);
    report.val_loss.push_back(val);
    if (val < best) {
      best = val;
      report.best_epoch = epoch;
      report.parameters = mlp;
    }
  }
  report.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// Supervised regression objective against fixed targets (outputs x samples).
inline Objective regression_objective(const Matrix& targets) {
  return [&targets](const Matrix& out, std::span<const Index> samples) {
    return mse_loss(out, targets(Eigen::all, std::vector<Index>(samples.begin(), samples.end())));
  };
}

// ---------------------------------------------------------------------------
// Model file: JSON with row-major weights.

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json mlp_to_json(const Mlp& mlp) {
  using nlohmann::json;
  json j;
  j["format_version"] = kModelFormatVersion;
  j["layer_dims"] = mlp.dims;
  j["hidden_activation"] = "elu";
  j["output_activation"] = "identity";
  j["weights"] = json::array();
  j["biases"] = json::array();
  for (const auto& l : mlp.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    j["weights"].push_back(std::move(w));
    j["biases"].push_back(std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size()));
  }
  return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  if (j.value("format_version", 0) != kModelFormatVersion) throw ValidationError("unsupported model format version");
  if (j.value("hidden_activation", "") != "elu" || j.value("output_activation", "") != "identity")
    throw ValidationError("unsupported activation");
  Mlp mlp;
  mlp.dims = j.at("layer_dims").get<std::vector<int>>();
  validate_dims(mlp.dims);
  const auto& ws = j.at("weights");
  const auto& bs = j.at("biases");
  if (ws.size() + 1 != mlp.dims.size() || bs.size() + 1 != mlp.dims.size())
    throw ValidationError("weight/bias arrays do not match layer_dims");
  for (std::size_t i = 0; i + 1 < mlp.dims.size(); ++i) {
    const auto w = ws[i].get<std::vector<double>>();
    const auto b = bs[i].get<std::vector<double>>();
    const int rows = mlp.dims[i + 1], cols = mlp.dims[i];
    if (w.size() != static_cast<std::size_t>(rows) * cols || b.size() != static_cast<std::size_t>(rows))
      throw ValidationError("layer " + std::to_string(i) + " array sizes do not match layer_dims");
    Layer l{Matrix(rows, cols), Vector(rows)};
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) l.weight(r, c) = w[static_cast<std::size_t>(r) * cols + c];
    for (int r = 0; r < rows; ++r) l.bias(r) = b[r];
    mlp.layers.push_back(std::move(l));
  }
  validate(mlp);
  return mlp;
}

}  // namespace rispa::nn
