// SPDX-License-Identifier: Apache-2.0
//
// Per-window instance normalization, tail padding, patching and the shared
// patch projection that together turn a [T x N] lookback window into the
// [M x N x D] token grid.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gridtst/tensor.hpp"

namespace gridtst {

inline constexpr double kRevinEps = 1e-5;

// Per-variate statistics of one window.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;  // clamped to >= kRevinEps
};

struct Normalized {
  std::vector<double> values;  // [T x N]
  NormStats stats;
};

// Zero mean and unit (population) std per column of a row-major [T x N] block.
Normalized revin_normalize(std::span<const double> window, std::size_t timesteps,
                           std::size_t channels);
// y * std + mean per column of a row-major [F x N] block.
std::vector<double> revin_denormalize(std::span<const double> forecast, std::size_t horizon,
                                      std::size_t channels, const NormStats& stats);

struct PatchConfig {
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  bool allow_gaps = false;  // permits stride > patch_len

  // Throws ConfigError on invalid settings for the given lookback.
  void validate(std::size_t lookback) const;
  std::size_t patch_count(std::size_t lookback) const;
  // (M - 1) * stride + patch_len
  std::size_t padded_length(std::size_t lookback) const;
};

// ceil((T - P) / S) + 2
std::size_t patch_count(std::size_t lookback, std::size_t patch_len, std::size_t stride);

// Appends copies of the last row until the block has padded_length rows.
std::vector<double> pad_tail(std::span<const double> window, std::size_t timesteps,
                             std::size_t channels, const PatchConfig& patch);

// Splits one padded series into M rows of P values; row i starts at i * S.
std::vector<double> patchify(std::span<const double> series, const PatchConfig& patch);

// patches [..., M, P] x W_p [P, D] + W_pos [M, D]
Tensor embed_patches(const Tensor& patches, const Tensor& projection, const Tensor& position);

struct PatchedBatch {
  Tensor patches;                // [B, N, M, P], no gradient
  std::vector<NormStats> stats;  // one per window
};

// Normalizes, pads and patches every window of inputs [B, T, N].
PatchedBatch prepare_patches(const Tensor& inputs, const PatchConfig& patch);

}  // namespace gridtst
