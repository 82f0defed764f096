// SPDX-License-Identifier: Apache-2.0

#include "gridtst/attention.hpp"

#include <cmath>

#include "gridtst/error.hpp"

namespace gridtst {

const char* direction_name(Direction d) {
  return d == Direction::horizontal ? "horizontal" : "vertical";
}

const char* norm_kind_name(NormKind k) { return k == NormKind::batch ? "batch" : "layer"; }

NormKind parse_norm_kind(const std::string& text) {
  if (text == "batch") return NormKind::batch;
  if (text == "layer") return NormKind::layer;
  throw ConfigError("unknown normalization '" + text + "' (expected batch or layer)");
}

namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones_param(std::size_t n) { return Tensor::full({n}, 1.0, true); }

}  // namespace

AttentionParams AttentionParams::init(std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                      Rng& rng, NormKind norm, double bn_momentum, double bn_eps) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("model.heads (" + std::to_string(heads) + ") must divide model.d_model (" +
                      std::to_string(d_model) + ")");
  }
  if (d_ff == 0) throw ConfigError("model.d_ff must be positive");
  AttentionParams p;
  p.heads = heads;
  p.norm = norm;
  p.w_query = xavier(d_model, d_model, rng);
  p.b_query = zeros_param(d_model);
  p.w_key = xavier(d_model, d_model, rng);
  p.b_key = zeros_param(d_model);
  p.w_value = xavier(d_model, d_model, rng);
  p.b_value = zeros_param(d_model);
  p.w_out = xavier(d_model, d_model, rng);
  p.b_out = zeros_param(d_model);
  p.w_ff1 = xavier(d_model, d_ff, rng);
  p.b_ff1 = zeros_param(d_ff);
  p.w_ff2 = xavier(d_ff, d_model, rng);
  p.b_ff2 = zeros_param(d_model);
  p.norm1_gamma = ones_param(d_model);
  p.norm1_beta = zeros_param(d_model);
  p.norm2_gamma = ones_param(d_model);
  p.norm2_beta = zeros_param(d_model);
  p.norm1_state = BatchNormState::identity(d_model, bn_momentum, bn_eps);
  p.norm2_state = BatchNormState::identity(d_model, bn_momentum, bn_eps);
  return p;
}

std::vector<std::pair<std::string, Tensor>> AttentionParams::named_parameters() const {
  return {
      {"w_query", w_query},         {"b_query", b_query},       {"w_key", w_key},
      {"b_key", b_key},             {"w_value", w_value},       {"b_value", b_value},
      {"w_out", w_out},             {"b_out", b_out},           {"w_ff1", w_ff1},
      {"b_ff1", b_ff1},             {"w_ff2", w_ff2},           {"b_ff2", b_ff2},
      {"norm1_gamma", norm1_gamma}, {"norm1_beta", norm1_beta}, {"norm2_gamma", norm2_gamma},
      {"norm2_beta", norm2_beta},
  };
}

// ---- maps ------------------------------------------------------------------

AttentionMap head_average(const AttentionCapture& capture, std::size_t sequence) {
  if (sequence >= capture.sequences) throw ShapeError("attention capture: sequence out of range");
  const std::size_t len = capture.length;
  AttentionMap map{capture.direction, capture.layer, len, len, std::vector<double>(len * len, 0.0)};
  for (std::size_t h = 0; h < capture.heads; ++h) {
    const double* w = capture.weights.data() + (sequence * capture.heads + h) * len * len;
    for (std::size_t i = 0; i < len * len; ++i) map.weights[i] += w[i];
  }
  for (auto& v : map.weights) v /= static_cast<double>(capture.heads);
  return map;
}

AttentionMap mean_map(const AttentionCapture& capture) {
  const std::size_t len = capture.length;
  AttentionMap map{capture.direction, capture.layer, len, len, std::vector<double>(len * len, 0.0)};
  const std::size_t blocks = capture.sequences * capture.heads;
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* w = capture.weights.data() + b * len * len;
    for (std::size_t i = 0; i < len * len; ++i) map.weights[i] += w[i];
  }
  for (auto& v : map.weights) v /= static_cast<double>(blocks);
  return map;
}

// ---- attention -------------------------------------------------------------

AttentionResult scaled_dot_attention(const Tensor& query, const Tensor& key, const Tensor& value) {
  if (query.rank() < 2 || query.shape() != key.shape() || value.rank() != query.rank() ||
      value.dim(value.rank() - 2) != key.dim(key.rank() - 2)) {
    throw ShapeError("scaled_dot_attention: Q " + shape_str(query.shape()) + ", K " +
                     shape_str(key.shape()) + ", V " + shape_str(value.shape()));
  }
  const double dk = static_cast<double>(query.shape().back());
  const Tensor scores = scale(matmul(query, transpose_last(key)), 1.0 / std::sqrt(dk));
  Tensor weights = softmax(scores, scores.rank() - 1);
  Tensor out = matmul(weights, value);
  return {std::move(out), std::move(weights)};
}

Tensor multi_head(const Tensor& x, const AttentionParams& params, LayerContext& ctx) {
  if (x.rank() != 3 || x.dim(2) != params.d_model()) {
    throw ShapeError("multi_head: expected [S, L, " + std::to_string(params.d_model()) +
                     "], got " + shape_str(x.shape()));
  }
  const std::size_t seqs = x.dim(0);
  const std::size_t len = x.dim(1);
  const std::size_t d = x.dim(2);
  const std::size_t h = params.heads;
  const std::size_t dk = d / h;

  // [S, L, D] -> [S, H, L, d_k]
  auto split_heads = [&](const Tensor& t) {
    return permute(reshape(t, {seqs, len, h, dk}), {0, 2, 1, 3});
  };
  const Tensor q = split_heads(add(matmul(x, params.w_query), params.b_query));
  const Tensor k = split_heads(add(matmul(x, params.w_key), params.b_key));
  const Tensor v = split_heads(add(matmul(x, params.w_value), params.b_value));

  auto attn = scaled_dot_attention(q, k, v);

  if (ctx.counter) {
    const auto entries = static_cast<std::uint64_t>(seqs) * len * len;
    (ctx.direction == Direction::horizontal ? ctx.counter->horizontal : ctx.counter->vertical) +=
        entries;
  }
  if (ctx.capture) {
    ctx.capture->direction = ctx.direction;
    ctx.capture->sequences = seqs;
    ctx.capture->heads = h;
    ctx.capture->length = len;
    ctx.capture->weights.assign(attn.weights.data().begin(), attn.weights.data().end());
  }

  const Tensor merged = reshape(permute(attn.out, {0, 2, 1, 3}), {seqs, len, d});
  return add(matmul(merged, params.w_out), params.b_out);
}

namespace {

Tensor normalize(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 NormKind kind, bool training) {
  if (kind == NormKind::layer) return layer_norm(x, gamma, beta, state.eps);
  return batch_norm(x, gamma, beta, state, training);
}

Tensor maybe_dropout(const Tensor& x, LayerContext& ctx) {
  if (!ctx.training || ctx.dropout == 0.0) return x;
  if (!ctx.rng) throw ConfigError("dropout in training mode needs a random generator");
  return dropout(x, ctx.dropout, *ctx.rng, true);
}

}  // namespace

Tensor encoder_layer(const Tensor& x, AttentionParams& params, LayerContext& ctx) {
  const Tensor attended = maybe_dropout(multi_head(x, params, ctx), ctx);
  const Tensor y1 = normalize(add(x, attended), params.norm1_gamma, params.norm1_beta,
                              params.norm1_state, params.norm, ctx.training);
  const Tensor hidden = gelu(add(matmul(y1, params.w_ff1), params.b_ff1));
  const Tensor ff = maybe_dropout(add(matmul(hidden, params.w_ff2), params.b_ff2), ctx);
  return normalize(add(y1, ff), params.norm2_gamma, params.norm2_beta, params.norm2_state,
                   params.norm, ctx.training);
}

Tensor grid_transpose(const Tensor& grid) {
  if (grid.rank() != 4) throw ShapeError("grid must be rank 4, got " + shape_str(grid.shape()));
  return permute(grid, {0, 2, 1, 3});
}

Tensor apply_vertical(const Tensor& grid, AttentionParams& params, LayerContext& ctx) {
  if (grid.rank() != 4) throw ShapeError("grid must be rank 4, got " + shape_str(grid.shape()));
  const Shape s = grid.shape();
  ctx.direction = Direction::vertical;
  const Tensor out = encoder_layer(reshape(grid, {s[0] * s[1], s[2], s[3]}), params, ctx);
  return reshape(out, s);
}

Tensor apply_horizontal(const Tensor& grid, AttentionParams& params, LayerContext& ctx) {
  const Tensor time_major = grid_transpose(grid);  // [B, N, M, D]
  const Shape s = time_major.shape();
  ctx.direction = Direction::horizontal;
  const Tensor out = encoder_layer(reshape(time_major, {s[0] * s[1], s[2], s[3]}), params, ctx);
  return grid_transpose(reshape(out, s));
}

AttentionCost count_attention_cost(std::size_t patches, std::size_t variates, std::size_t d_model,
                                   const std::vector<Direction>& layers) {
  AttentionCost cost;
  const std::uint64_t m = patches;
  const std::uint64_t n = variates;
  for (auto dir : layers) {
    if (dir == Direction::horizontal) {
      cost.horizontal_scores += n * m * m;
    } else {
      cost.vertical_scores += m * n * n;
    }
  }
  cost.score_macs = cost.total_scores() * d_model;
  cost.value_macs = cost.total_scores() * d_model;
  return cost;
}

}  // namespace gridtst
