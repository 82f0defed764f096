// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gridtst/rng.hpp"
#include "gridtst/tensor.hpp"

namespace gridtst {

// Horizontal attention runs along the patch (time) axis of each variate;
// vertical attention runs across variates at each patch step.
enum class Direction { horizontal, vertical };

const char* direction_name(Direction d);

enum class NormKind { batch, layer };

const char* norm_kind_name(NormKind k);
NormKind parse_norm_kind(const std::string& text);

// One post-norm encoder layer: multi-head attention, two normalizations and
// a GELU feed-forward block. Heads occupy consecutive column blocks of the
// [D, D] projections, so head h uses columns [h * d_k, (h + 1) * d_k).
struct AttentionParams {
  std::size_t heads = 1;
  NormKind norm = NormKind::batch;

  Tensor w_query, b_query;  // [D, D], [D]
  Tensor w_key, b_key;
  Tensor w_value, b_value;
  Tensor w_out, b_out;
  Tensor w_ff1, b_ff1;  // [D, D_ff], [D_ff]
  Tensor w_ff2, b_ff2;  // [D_ff, D], [D]
  Tensor norm1_gamma, norm1_beta;
  Tensor norm2_gamma, norm2_beta;
  BatchNormState norm1_state, norm2_state;

  static AttentionParams init(std::size_t d_model, std::size_t heads, std::size_t d_ff, Rng& rng,
                              NormKind norm = NormKind::batch, double bn_momentum = 0.1,
                              double bn_eps = 1e-5);

  std::size_t d_model() const { return w_query.dim(0); }
  std::size_t d_ff() const { return w_ff1.dim(1); }
  std::size_t head_dim() const { return d_model() / heads; }

  // Learnable tensors, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

// Raw softmax weights of one attention call: [sequences, heads, length, length].
struct AttentionCapture {
  Direction direction = Direction::horizontal;
  std::size_t layer = 0;
  std::size_t sequences = 0;
  std::size_t heads = 0;
  std::size_t length = 0;
  std::vector<double> weights;
};

// Head-averaged [rows x cols] attention weights.
struct AttentionMap {
  Direction direction = Direction::horizontal;
  std::size_t layer = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;

  double at(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
};

// Average over heads of one captured sequence.
AttentionMap head_average(const AttentionCapture& capture, std::size_t sequence);
// Average over heads and over every captured sequence.
AttentionMap mean_map(const AttentionCapture& capture);

// Counts of attention scores materialized, split by direction.
struct ScoreCounter {
  std::uint64_t horizontal = 0;
  std::uint64_t vertical = 0;
};

struct LayerContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;                    // required when training with dropout > 0
  AttentionCapture* capture = nullptr;   // filled by multi_head when set
  ScoreCounter* counter = nullptr;
  Direction direction = Direction::horizontal;
};

struct AttentionResult {
  Tensor out;      // [..., L, d_v]
  Tensor weights;  // [..., L, L]
};

// softmax(Q K^T / sqrt(d_k)) V over the last two axes, no masking.
AttentionResult scaled_dot_attention(const Tensor& query, const Tensor& key, const Tensor& value);

// x [S, L, D] -> [S, L, D]; each of the S sequences attends only within itself.
Tensor multi_head(const Tensor& x, const AttentionParams& params, LayerContext& ctx);

// y1 = Norm(x + Dropout(MHA(x))); y = Norm(y1 + Dropout(FFN(y1)))
Tensor encoder_layer(const Tensor& x, AttentionParams& params, LayerContext& ctx);

// [B, M, N, D] <-> [B, N, M, D]
Tensor grid_transpose(const Tensor& grid);

// Both take and return the grid as [B, M, N, D].
Tensor apply_horizontal(const Tensor& grid, AttentionParams& params, LayerContext& ctx);
Tensor apply_vertical(const Tensor& grid, AttentionParams& params, LayerContext& ctx);

struct AttentionCost {
  std::uint64_t horizontal_scores = 0;  // N * M^2 per horizontal layer
  std::uint64_t vertical_scores = 0;    // M * N^2 per vertical layer
  std::uint64_t score_macs = 0;         // scores * D for Q K^T
  std::uint64_t value_macs = 0;         // scores * D for weights * V

  std::uint64_t total_scores() const { return horizontal_scores + vertical_scores; }
  std::uint64_t total_macs() const { return score_macs + value_macs; }
};

// Exact counts for one window pushed through the given layer directions.
AttentionCost count_attention_cost(std::size_t patches, std::size_t variates,
                                   std::size_t d_model, const std::vector<Direction>& layers);

}  // namespace gridtst
