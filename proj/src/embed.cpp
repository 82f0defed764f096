// SPDX-License-Identifier: Apache-2.0

#include "gridtst/embed.hpp"

#include <algorithm>
#include <cmath>

#include "gridtst/error.hpp"

namespace gridtst {

Normalized revin_normalize(std::span<const double> window, std::size_t timesteps,
                           std::size_t channels) {
  if (window.size() != timesteps * channels) throw ShapeError("revin_normalize: size mismatch");
  if (timesteps < 2) throw ShapeError("revin_normalize: need at least 2 timesteps");
  Normalized out;
  out.values.resize(window.size());
  out.stats.mean.assign(channels, 0.0);
  out.stats.std.assign(channels, 0.0);
  const double count = static_cast<double>(timesteps);
  for (std::size_t t = 0; t < timesteps; ++t) {
    for (std::size_t n = 0; n < channels; ++n) out.stats.mean[n] += window[t * channels + n];
  }
  for (auto& m : out.stats.mean) m /= count;
  for (std::size_t t = 0; t < timesteps; ++t) {
    for (std::size_t n = 0; n < channels; ++n) {
      const double d = window[t * channels + n] - out.stats.mean[n];
      out.stats.std[n] += d * d;
    }
  }
  for (auto& s : out.stats.std) s = std::max(std::sqrt(s / count), kRevinEps);
  for (std::size_t t = 0; t < timesteps; ++t) {
    for (std::size_t n = 0; n < channels; ++n) {
      const std::size_t i = t * channels + n;
      out.values[i] = (window[i] - out.stats.mean[n]) / out.stats.std[n];
    }
  }
  return out;
}

std::vector<double> revin_denormalize(std::span<const double> forecast, std::size_t horizon,
                                      std::size_t channels, const NormStats& stats) {
  if (stats.mean.size() != channels || stats.std.size() != channels) {
    throw ShapeError("revin_denormalize: statistics cover " + std::to_string(stats.mean.size()) +
                     " variates, forecast has " + std::to_string(channels));
  }
  if (forecast.size() != horizon * channels) throw ShapeError("revin_denormalize: size mismatch");
  std::vector<double> out(forecast.size());
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t n = 0; n < channels; ++n) {
      const std::size_t i = t * channels + n;
      out[i] = forecast[i] * stats.std[n] + stats.mean[n];
    }
  }
  return out;
}

std::size_t patch_count(std::size_t lookback, std::size_t patch_len, std::size_t stride) {
  if (stride == 0) throw ConfigError("patch stride must be positive");
  if (lookback < patch_len) {
    throw ConfigError("lookback " + std::to_string(lookback) + " is shorter than patch length " +
                      std::to_string(patch_len));
  }
  const std::size_t span = lookback - patch_len;
  return (span + stride - 1) / stride + 2;
}

void PatchConfig::validate(std::size_t lookback) const {
  if (patch_len == 0) throw ConfigError("model.patch_len must be at least 1");
  if (stride == 0) throw ConfigError("model.stride must be at least 1");
  if (stride > patch_len && !allow_gaps) {
    throw ConfigError("model.stride " + std::to_string(stride) + " exceeds model.patch_len " +
                      std::to_string(patch_len) + " (gaps between patches are disabled)");
  }
  (void)gridtst::patch_count(lookback, patch_len, stride);
}

std::size_t PatchConfig::patch_count(std::size_t lookback) const {
  return gridtst::patch_count(lookback, patch_len, stride);
}

std::size_t PatchConfig::padded_length(std::size_t lookback) const {
  return (patch_count(lookback) - 1) * stride + patch_len;
}

std::vector<double> pad_tail(std::span<const double> window, std::size_t timesteps,
                             std::size_t channels, const PatchConfig& patch) {
  if (timesteps == 0 || window.size() != timesteps * channels) {
    throw ShapeError("pad_tail: window size mismatch");
  }
  const std::size_t padded = patch.padded_length(timesteps);
  std::vector<double> out(window.begin(), window.end());
  out.reserve(padded * channels);
  const auto last = window.subspan((timesteps - 1) * channels, channels);
  for (std::size_t t = timesteps; t < padded; ++t) out.insert(out.end(), last.begin(), last.end());
  return out;
}

std::vector<double> patchify(std::span<const double> series, const PatchConfig& patch) {
  const std::size_t len = series.size();
  if (len < patch.patch_len || (len - patch.patch_len) % patch.stride != 0) {
    throw ShapeError("patchify: length " + std::to_string(len) +
                     " is not (M - 1) * stride + patch_len");
  }
  const std::size_t m = (len - patch.patch_len) / patch.stride + 1;
  std::vector<double> out(m * patch.patch_len);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(series.begin() + static_cast<std::ptrdiff_t>(i * patch.stride), patch.patch_len,
                out.begin() + static_cast<std::ptrdiff_t>(i * patch.patch_len));
  }
  return out;
}

Tensor embed_patches(const Tensor& patches, const Tensor& projection, const Tensor& position) {
  const auto& s = patches.shape();
  if (s.size() < 2 || projection.rank() != 2 || position.rank() != 2 ||
      projection.dim(0) != s.back() || position.dim(0) != s[s.size() - 2] ||
      position.dim(1) != projection.dim(1)) {
    throw ShapeError("embed_patches: patches " + shape_str(s) + ", W_p " +
                     shape_str(projection.shape()) + ", W_pos " + shape_str(position.shape()));
  }
  return add(matmul(patches, projection), position);
}

PatchedBatch prepare_patches(const Tensor& inputs, const PatchConfig& patch) {
  if (inputs.rank() != 3) throw ShapeError("inputs must be [B, T, N], got " + shape_str(inputs.shape()));
  const std::size_t b = inputs.dim(0);
  const std::size_t t = inputs.dim(1);
  const std::size_t n = inputs.dim(2);
  patch.validate(t);
  const std::size_t m = patch.patch_count(t);
  const std::size_t padded = patch.padded_length(t);
  const std::size_t p = patch.patch_len;

  PatchedBatch out;
  out.stats.reserve(b);
  std::vector<double> values(b * n * m * p);
  std::vector<double> series(padded);
  const auto data = inputs.data();
  for (std::size_t i = 0; i < b; ++i) {
    const auto window = data.subspan(i * t * n, t * n);
    for (double v : window) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in input window");
    }
    auto norm = revin_normalize(window, t, n);
    const auto padded_block = pad_tail(norm.values, t, n, patch);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t r = 0; r < padded; ++r) series[r] = padded_block[r * n + k];
      const auto patches = patchify(series, patch);
      std::copy(patches.begin(), patches.end(),
                values.begin() + static_cast<std::ptrdiff_t>((i * n + k) * m * p));
    }
    out.stats.push_back(std::move(norm.stats));
  }
  out.patches = Tensor::from({b, n, m, p}, std::move(values));
  return out;
}

}  // namespace gridtst
