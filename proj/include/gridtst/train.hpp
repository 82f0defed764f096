// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gridtst/data.hpp"
#include "gridtst/model.hpp"
#include "gridtst/rng.hpp"
#include "gridtst/tensor.hpp"

namespace gridtst {

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t count = 0;  // elements compared
};

double mse(const Tensor& prediction, const Tensor& target);
double mae(const Tensor& prediction, const Tensor& target);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with bias correction. Moments are kept per parameter, in the order the
// parameters were given.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig config);

  // Throws Error naming the first parameter without a gradient.
  void step();
  void zero_grad();
  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  std::span<const double> first_moment(std::size_t i) const { return m_[i]; }
  std::span<const double> second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_ = 0;
};

// Rescales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params, double max_norm);

// Sorted subset of max(1, round(ratio * N)) indices drawn without replacement.
std::vector<std::size_t> sample_variates(std::size_t variates, double ratio, Rng& rng);

// Repeats the last observed value of each variate over the horizon.
Metrics persistence_baseline(const WindowSet& windows);
Metrics persistence_baseline(const TimeSeriesDataset& ds, std::size_t lookback,
                             std::size_t horizon);

// Inference-mode metrics over every window, batched in order.
Metrics evaluate(ModelParams& params, const ModelConfig& config, const WindowSet& windows,
                 std::size_t batch_size = 32);

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::size_t patience = 5;
  double clip_norm = 5.0;     // <= 0 disables clipping
  double sample_ratio = 1.0;  // variate sampling, training batches only
  std::size_t max_steps = 0;  // 0 = no limit
  std::uint64_t seed = 2024;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  std::size_t steps = 0;  // cumulative optimizer steps
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  Metrics test;
  bool has_test = false;
  double sample_ratio = 1.0;
  std::uint64_t vertical_scores_per_batch = 0;    // measured on the first training batch
  std::uint64_t horizontal_scores_per_batch = 0;
  std::size_t batch_variates = 0;                 // variates in that batch
  std::size_t steps = 0;
  double peak_rss_mb = 0.0;
  double wall_s = 0.0;
};

struct TrainResult {
  TrainReport report;
  ModelParams best;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Shuffled mini-batch training with early stopping on validation MSE; the
// returned parameters are the best-validation snapshot.
TrainResult train(ModelParams params, const ModelConfig& config, const WindowSet& train_windows,
                  const WindowSet& val_windows, const WindowSet* test_windows,
                  const TrainConfig& options, const EpochCallback& on_epoch = {});

// Peak resident set size of this process in MiB (0 when unavailable).
double peak_rss_mb();

}  // namespace gridtst
