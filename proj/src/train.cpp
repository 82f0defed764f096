// SPDX-License-Identifier: Apache-2.0

#include "gridtst/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "gridtst/error.hpp"

namespace gridtst {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": prediction " + shape_str(a.shape()) + " vs target " +
                     shape_str(b.shape()));
  }
}

// Independent streams derived from one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void accumulate(Metrics& acc, std::span<const double> pred, std::span<const double> target,
                double& sq, double& ab) {
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    sq += d * d;
    ab += std::abs(d);
  }
  acc.count += pred.size();
}

}  // namespace

double mse(const Tensor& prediction, const Tensor& target) {
  check_same_shape(prediction, target, "mse");
  const auto p = prediction.data();
  const auto t = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

double mae(const Tensor& prediction, const Tensor& target) {
  check_same_shape(prediction, target, "mae");
  const auto p = prediction.data();
  const auto t = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

// ---- Adam ------------------------------------------------------------------

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.lr < 0.0 || config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 ||
      config_.beta2 >= 1.0 || config_.eps <= 0.0) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) throw Error("Adam: parameter '" + name + "' has no gradient");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    auto values = p.mutable_data();
    const auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad[k] + config_.weight_decay * values[k];
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      values[k] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

double clip_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      Tensor handle = t;
      for (double& g : handle.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

std::vector<std::size_t> sample_variates(std::size_t variates, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError("variate sample ratio must be in (0, 1], got " + std::to_string(ratio));
  }
  if (variates == 0) throw ConfigError("cannot sample from zero variates");
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(variates))));
  std::vector<std::size_t> pool(variates);
  for (std::size_t i = 0; i < variates; ++i) pool[i] = i;
  // Partial Fisher-Yates: the first k slots are a uniform subset.
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(variates - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// ---- evaluation ------------------------------------------------------------

Metrics persistence_baseline(const WindowSet& windows) {
  Metrics out;
  double sq = 0.0;
  double ab = 0.0;
  const std::size_t t = windows.lookback();
  const std::size_t f = windows.horizon();
  const std::size_t n = windows.channels();
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto batch = windows.batch({w});
    const auto x = batch.inputs.data();
    const auto y = batch.targets.data();
    std::vector<double> pred(f * n);
    for (std::size_t s = 0; s < f; ++s) {
      for (std::size_t k = 0; k < n; ++k) pred[s * n + k] = x[(t - 1) * n + k];
    }
    accumulate(out, pred, y, sq, ab);
  }
  out.mse = sq / static_cast<double>(out.count);
  out.mae = ab / static_cast<double>(out.count);
  return out;
}

Metrics persistence_baseline(const TimeSeriesDataset& ds, std::size_t lookback,
                             std::size_t horizon) {
  return persistence_baseline(WindowSet(ds, lookback, horizon));
}

Metrics evaluate(ModelParams& params, const ModelConfig& config, const WindowSet& windows,
                 std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  NoGradGuard no_grad;
  Metrics out;
  double sq = 0.0;
  double ab = 0.0;
  std::vector<std::size_t> starts;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    starts.clear();
    for (std::size_t w = begin; w < std::min(windows.size(), begin + batch_size); ++w) {
      starts.push_back(w);
    }
    const auto batch = windows.batch(starts);
    const auto result = forward(batch.inputs, params, config);
    accumulate(out, result.prediction.data(), batch.targets.data(), sq, ab);
  }
  out.mse = sq / static_cast<double>(out.count);
  out.mae = ab / static_cast<double>(out.count);
  return out;
}

double peak_rss_mb() {
  std::ifstream status("/proc/self/status");
  for (std::string line; std::getline(status, line);) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream is(line.substr(6));
      double kb = 0.0;
      is >> kb;
      return kb / 1024.0;
    }
  }
  return 0.0;
}

// ---- training --------------------------------------------------------------

TrainResult train(ModelParams params, const ModelConfig& config, const WindowSet& train_windows,
                  const WindowSet& val_windows, const WindowSet* test_windows,
                  const TrainConfig& options, const EpochCallback& on_epoch) {
  const auto started = std::chrono::steady_clock::now();
  if (options.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (options.epochs == 0) throw ConfigError("train.epochs must be positive");
  if (!(options.sample_ratio > 0.0 && options.sample_ratio <= 1.0)) {
    throw ConfigError("train.sample_ratio must be in (0, 1]");
  }

  // Work on a private copy so the caller's tensors are never mutated.
  params = params.clone();
  Rng shuffle_rng(derive_seed(options.seed, 0));
  Rng dropout_rng(derive_seed(options.seed, 1));
  Rng sample_rng(derive_seed(options.seed, 2));

  const auto named = params.named_parameters();
  Adam adam(named, options.adam);

  TrainResult result;
  TrainReport& report = result.report;
  report.sample_ratio = options.sample_ratio;
  result.best = params.clone();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  bool counted = false;
  bool out_of_steps = false;

  for (std::size_t epoch = 1; epoch <= options.epochs && !out_of_steps; ++epoch) {
    const auto order = train_windows.order(&shuffle_rng);
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::vector<std::size_t> starts(
          order.begin() + static_cast<std::ptrdiff_t>(begin),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + options.batch_size)));
      std::vector<std::size_t> subset;
      if (options.sample_ratio < 1.0) {
        subset = sample_variates(train_windows.channels(), options.sample_ratio, sample_rng);
      }
      const auto batch = train_windows.batch(starts, subset.empty() ? nullptr : &subset);

      ScoreCounter counter;
      ForwardOptions fwd;
      fwd.training = true;
      fwd.rng = &dropout_rng;
      fwd.counter = &counter;
      const auto out = forward(batch.inputs, params, config, fwd);
      const Tensor loss = mse_loss(out.prediction, batch.targets);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("training diverged: loss " + std::to_string(value) + " at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(adam.steps() + 1) +
                           " (lr " + std::to_string(options.adam.lr) + ")");
      }
      if (!counted) {
        report.vertical_scores_per_batch = counter.vertical;
        report.horizontal_scores_per_batch = counter.horizontal;
        report.batch_variates = batch.inputs.dim(2);
        counted = true;
      }

      adam.zero_grad();
      loss.backward();
      if (options.clip_norm > 0.0) clip_grad_norm(named, options.clip_norm);
      adam.step();

      loss_sum += value;
      ++loss_batches;
      if (options.max_steps && adam.steps() >= options.max_steps) {
        out_of_steps = true;
        break;
      }
    }

    const Metrics val = evaluate(params, config, val_windows, options.batch_size);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(loss_batches), val.mse, val.mae,
                    static_cast<std::size_t>(adam.steps())};
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (val.mse < best_val) {
      best_val = val.mse;
      report.best_epoch = epoch;
      result.best = params.clone();
      stale = 0;
    } else if (++stale >= options.patience && options.patience > 0) {
      break;
    }
  }

  report.steps = static_cast<std::size_t>(adam.steps());
  if (test_windows) {
    report.test = evaluate(result.best, config, *test_windows, options.batch_size);
    report.has_test = true;
  }
  report.peak_rss_mb = peak_rss_mb();
  report.wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace gridtst
