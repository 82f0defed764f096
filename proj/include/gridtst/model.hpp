// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gridtst/attention.hpp"
#include "gridtst/embed.hpp"
#include "gridtst/rng.hpp"
#include "gridtst/tensor.hpp"

namespace gridtst {

enum class SequencingMode { channel_first, time_first, alternate };

const char* mode_name(SequencingMode mode);
SequencingMode parse_mode(const std::string& text);

struct ModelConfig {
  std::size_t lookback = 336;  // T
  std::size_t horizon = 96;    // F
  std::size_t variates = 7;    // N
  std::size_t patch_len = 16;  // P
  std::size_t stride = 8;      // S
  std::size_t d_model = 16;    // D
  std::size_t heads = 4;       // H
  std::size_t layers = 2;      // L
  std::size_t d_ff = 0;        // 0 means 2 * D
  double dropout = 0.2;
  SequencingMode mode = SequencingMode::channel_first;
  NormKind norm = NormKind::batch;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::uint64_t seed = 2024;

  // Throws ConfigError naming the offending field.
  void validate() const;
  PatchConfig patch() const { return {patch_len, stride, false}; }
  std::size_t patch_count() const { return patch().patch_count(lookback); }  // M
  std::size_t ff_width() const { return d_ff ? d_ff : 2 * d_model; }
};

struct LayerSlot {
  Direction direction;
  std::size_t index;
};

// channel_first: ceil(L/2) vertical then the rest horizontal; time_first: the
// mirror; alternate: even layers horizontal, odd layers vertical.
std::vector<LayerSlot> sequence_layers(SequencingMode mode, std::size_t layers);
std::vector<Direction> layer_directions(SequencingMode mode, std::size_t layers);

struct ModelParams {
  Tensor patch_proj;  // W_p [P, D]
  Tensor pos_embed;   // W_pos [M, D]
  std::vector<AttentionParams> layers;
  std::vector<Direction> directions;
  Tensor head_weight;  // [M * D, F], shared by all variates
  Tensor head_bias;    // [F]

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::size_t parameter_count() const;
  // Deep copy with fresh leaves.
  ModelParams clone() const;
};

ModelParams build(const ModelConfig& config, Rng& rng);
ModelParams build(const ModelConfig& config);  // seeded from config.seed

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // dropout draws, training only
  bool capture_attention = false;
  ScoreCounter* counter = nullptr;
};

struct ForwardResult {
  Tensor prediction;  // [B, F, N]
  std::vector<AttentionCapture> captures;  // one per layer when requested
};

// inputs [B, T, N] -> [B, F, N]. N may differ from config.variates (the
// weights do not depend on it), which is what variate sampling relies on.
ForwardResult forward(const Tensor& inputs, ModelParams& params, const ModelConfig& config,
                      const ForwardOptions& options = {});

// One CSV per captured layer (row,col,weight), holding the head average and,
// for batches of more than one sequence, the mean over sequences. With
// per_sequence set, one extra file per sequence is written as well.
std::vector<std::filesystem::path> export_attention(const std::vector<AttentionCapture>& captures,
                                                    const std::filesystem::path& dir,
                                                    bool per_sequence = false);
void write_attention_csv(const AttentionMap& map, const std::filesystem::path& path);

// ---- checkpoints -----------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::vector<double> data_mean;  // dataset standardization, empty if none
  std::vector<double> data_std;
  std::vector<std::string> columns;
};

// Binary container: "GRIDTST-CKPT v1\n", a length-prefixed key=value header,
// then named float64 tensors. See docs in README.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_model_config(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text);

}  // namespace gridtst
