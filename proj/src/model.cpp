// SPDX-License-Identifier: Apache-2.0

#include "gridtst/model.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "gridtst/error.hpp"
#include "gridtst/text.hpp"

namespace gridtst {

const char* mode_name(SequencingMode mode) {
  switch (mode) {
    case SequencingMode::channel_first:
      return "channel_first";
    case SequencingMode::time_first:
      return "time_first";
    case SequencingMode::alternate:
      return "alternate";
  }
  return "unknown";
}

SequencingMode parse_mode(const std::string& text) {
  if (text == "channel_first") return SequencingMode::channel_first;
  if (text == "time_first") return SequencingMode::time_first;
  if (text == "alternate") return SequencingMode::alternate;
  throw ConfigError("unknown sequencing mode '" + text +
                    "' (expected channel_first, time_first or alternate)");
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(lookback >= 2, "model.lookback must be at least 2");
  need(horizon >= 1, "model.horizon must be at least 1");
  need(variates >= 1, "model.variates must be at least 1");
  need(d_model >= 1, "model.d_model must be at least 1");
  need(heads >= 1 && d_model % heads == 0,
       "model.heads (" + std::to_string(heads) + ") must divide model.d_model (" +
           std::to_string(d_model) + ")");
  need(layers >= 1, "model.layers must be at least 1");
  need(dropout >= 0.0 && dropout < 1.0, "model.dropout must be in [0, 1)");
  need(bn_momentum >= 0.0 && bn_momentum <= 1.0, "model.bn_momentum must be in [0, 1]");
  need(bn_eps > 0.0, "model.bn_eps must be positive");
  patch().validate(lookback);
}

std::vector<LayerSlot> sequence_layers(SequencingMode mode, std::size_t layers) {
  std::vector<LayerSlot> out;
  out.reserve(layers);
  const std::size_t first_block = (layers + 1) / 2;
  for (std::size_t i = 0; i < layers; ++i) {
    Direction d = Direction::horizontal;
    switch (mode) {
      case SequencingMode::channel_first:
        d = i < first_block ? Direction::vertical : Direction::horizontal;
        break;
      case SequencingMode::time_first:
        d = i < first_block ? Direction::horizontal : Direction::vertical;
        break;
      case SequencingMode::alternate:
        d = i % 2 == 0 ? Direction::horizontal : Direction::vertical;
        break;
    }
    out.push_back({d, i});
  }
  return out;
}

std::vector<Direction> layer_directions(SequencingMode mode, std::size_t layers) {
  std::vector<Direction> out;
  for (const auto& slot : sequence_layers(mode, layers)) out.push_back(slot.direction);
  return out;
}

// ---- params ----------------------------------------------------------------

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out{{"patch_proj", patch_proj},
                                                  {"pos_embed", pos_embed}};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (auto& [name, t] : layers[i].named_parameters()) {
      out.emplace_back("layer" + std::to_string(i) + "." + name, t);
    }
  }
  out.emplace_back("head_weight", head_weight);
  out.emplace_back("head_bias", head_bias);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams out = *this;
  out.patch_proj = patch_proj.clone();
  out.pos_embed = pos_embed.clone();
  out.head_weight = head_weight.clone();
  out.head_bias = head_bias.clone();
  for (auto& layer : out.layers) {
    for (Tensor* t : {&layer.w_query, &layer.b_query, &layer.w_key, &layer.b_key, &layer.w_value,
                      &layer.b_value, &layer.w_out, &layer.b_out, &layer.w_ff1, &layer.b_ff1,
                      &layer.w_ff2, &layer.b_ff2, &layer.norm1_gamma, &layer.norm1_beta,
                      &layer.norm2_gamma, &layer.norm2_beta}) {
      *t = t->clone();
    }
  }
  return out;
}

ModelParams build(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t m = config.patch_count();
  const std::size_t d = config.d_model;
  ModelParams p;

  const double proj_bound = std::sqrt(6.0 / static_cast<double>(config.patch_len + d));
  std::vector<double> proj(config.patch_len * d);
  for (auto& v : proj) v = rng.uniform(-proj_bound, proj_bound);
  p.patch_proj = Tensor::from({config.patch_len, d}, std::move(proj), true);

  std::vector<double> pos(m * d);
  for (auto& v : pos) v = rng.uniform(-0.02, 0.02);
  p.pos_embed = Tensor::from({m, d}, std::move(pos), true);

  p.directions = layer_directions(config.mode, config.layers);
  for (std::size_t i = 0; i < config.layers; ++i) {
    p.layers.push_back(AttentionParams::init(d, config.heads, config.ff_width(), rng, config.norm,
                                             config.bn_momentum, config.bn_eps));
  }

  const double head_bound = std::sqrt(6.0 / static_cast<double>(m * d + config.horizon));
  std::vector<double> head(m * d * config.horizon);
  for (auto& v : head) v = rng.uniform(-head_bound, head_bound);
  p.head_weight = Tensor::from({m * d, config.horizon}, std::move(head), true);
  p.head_bias = Tensor::zeros({config.horizon}, true);
  return p;
}

ModelParams build(const ModelConfig& config) {
  Rng rng(config.seed);
  return build(config, rng);
}

// ---- forward ---------------------------------------------------------------

ForwardResult forward(const Tensor& inputs, ModelParams& params, const ModelConfig& config,
                      const ForwardOptions& options) {
  if (inputs.rank() != 3 || inputs.dim(1) != config.lookback) {
    throw ShapeError("forward: expected inputs [B, " + std::to_string(config.lookback) +
                     ", N], got " + shape_str(inputs.shape()));
  }
  if (options.capture_attention && options.training) {
    throw ConfigError("attention capture is only available in inference mode");
  }
  const std::size_t b = inputs.dim(0);
  const std::size_t n = inputs.dim(2);
  const std::size_t m = config.patch_count();
  const std::size_t d = config.d_model;
  const std::size_t f = config.horizon;
  if (params.pos_embed.dim(0) != m || params.layers.size() != params.directions.size()) {
    throw ShapeError("forward: parameters do not match the model configuration");
  }

  const auto patched = prepare_patches(inputs, config.patch());
  // [B, N, M, D] -> canonical [B, M, N, D]
  Tensor grid = grid_transpose(embed_patches(patched.patches, params.patch_proj, params.pos_embed));

  ForwardResult result;
  LayerContext ctx;
  ctx.training = options.training;
  ctx.dropout = options.training ? config.dropout : 0.0;
  ctx.rng = options.rng;
  ctx.counter = options.counter;
  if (options.capture_attention) result.captures.resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    ctx.capture = options.capture_attention ? &result.captures[i] : nullptr;
    if (params.directions[i] == Direction::horizontal) {
      grid = apply_horizontal(grid, params.layers[i], ctx);
    } else {
      grid = apply_vertical(grid, params.layers[i], ctx);
    }
    if (ctx.capture) ctx.capture->layer = i;
  }

  const Tensor flat = reshape(grid_transpose(grid), {b, n, m * d});
  const Tensor head = add(matmul(flat, params.head_weight), params.head_bias);  // [B, N, F]
  const Tensor normalized = permute(head, {0, 2, 1});                            // [B, F, N]

  std::vector<double> scale_v(b * f * n);
  std::vector<double> shift_v(b * f * n);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t t = 0; t < f; ++t) {
      for (std::size_t k = 0; k < n; ++k) {
        scale_v[(i * f + t) * n + k] = patched.stats[i].std[k];
        shift_v[(i * f + t) * n + k] = patched.stats[i].mean[k];
      }
    }
  }
  result.prediction = add(mul(normalized, Tensor::from({b, f, n}, std::move(scale_v))),
                          Tensor::from({b, f, n}, std::move(shift_v)));
  return result;
}

// ---- attention export ------------------------------------------------------

void write_attention_csv(const AttentionMap& map, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write attention map " + path.string());
  out << "row,col,weight\n" << std::setprecision(17);
  for (std::size_t r = 0; r < map.rows; ++r) {
    for (std::size_t c = 0; c < map.cols; ++c) out << r << ',' << c << ',' << map.at(r, c) << '\n';
  }
  if (!out) throw IoError("failed writing attention map " + path.string());
}

std::vector<std::filesystem::path> export_attention(const std::vector<AttentionCapture>& captures,
                                                    const std::filesystem::path& dir,
                                                    bool per_sequence) {
  if (captures.empty()) throw ConfigError("no attention maps captured (enable capture at forward)");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (const auto& cap : captures) {
    const std::string stem =
        "layer" + std::to_string(cap.layer) + "_" + direction_name(cap.direction);
    const auto path = dir / (stem + ".csv");
    write_attention_csv(mean_map(cap), path);
    written.push_back(path);
    if (per_sequence) {
      for (std::size_t s = 0; s < cap.sequences; ++s) {
        const auto seq_path = dir / (stem + "_seq" + std::to_string(s) + ".csv");
        write_attention_csv(head_average(cap, s), seq_path);
        written.push_back(seq_path);
      }
    }
  }
  return written;
}

}  // namespace gridtst
