// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "gridtst/error.hpp"
#include "gridtst/model.hpp"
#include "gridtst/text.hpp"

namespace gridtst {

static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

namespace {

constexpr std::string_view kMagic = "GRIDTST-CKPT v1\n";

std::map<std::string, std::string> parse_lines(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError("malformed header line: " + std::string(t));
    kv[std::string(text::trim(t.substr(0, eq)))] = std::string(text::trim(t.substr(eq + 1)));
  }
  return kv;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError(path + ": truncated checkpoint");
  return v;
}

void put_tensor(std::ostream& out, const std::string& name, const Shape& shape,
                std::span<const double> data) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) put<std::uint64_t>(out, e);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
}

struct RawTensor {
  Shape shape;
  std::vector<double> data;
};

}  // namespace

std::string serialize_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "model.lookback = " << c.lookback << '\n'
     << "model.horizon = " << c.horizon << '\n'
     << "model.variates = " << c.variates << '\n'
     << "model.patch_len = " << c.patch_len << '\n'
     << "model.stride = " << c.stride << '\n'
     << "model.d_model = " << c.d_model << '\n'
     << "model.heads = " << c.heads << '\n'
     << "model.layers = " << c.layers << '\n'
     << "model.d_ff = " << c.d_ff << '\n'
     << "model.dropout = " << text::format_double(c.dropout) << '\n'
     << "model.mode = " << mode_name(c.mode) << '\n'
     << "model.norm = " << norm_kind_name(c.norm) << '\n'
     << "model.bn_momentum = " << text::format_double(c.bn_momentum) << '\n'
     << "model.bn_eps = " << text::format_double(c.bn_eps) << '\n'
     << "model.seed = " << c.seed << '\n';
  return os.str();
}

ModelConfig parse_model_config(const std::string& header) {
  ModelConfig c;
  for (const auto& [key, value] : parse_lines(header)) {
    if (key.rfind("model.", 0) != 0) continue;
    const auto field = key.substr(6);
    if (field == "lookback") c.lookback = text::parse_u64(value, key);
    else if (field == "horizon") c.horizon = text::parse_u64(value, key);
    else if (field == "variates") c.variates = text::parse_u64(value, key);
    else if (field == "patch_len") c.patch_len = text::parse_u64(value, key);
    else if (field == "stride") c.stride = text::parse_u64(value, key);
    else if (field == "d_model") c.d_model = text::parse_u64(value, key);
    else if (field == "heads") c.heads = text::parse_u64(value, key);
    else if (field == "layers") c.layers = text::parse_u64(value, key);
    else if (field == "d_ff") c.d_ff = text::parse_u64(value, key);
    else if (field == "dropout") c.dropout = text::parse_double(value, key);
    else if (field == "mode") c.mode = parse_mode(value);
    else if (field == "norm") c.norm = parse_norm_kind(value);
    else if (field == "bn_momentum") c.bn_momentum = text::parse_double(value, key);
    else if (field == "bn_eps") c.bn_eps = text::parse_double(value, key);
    else if (field == "seed") c.seed = text::parse_u64(value, key);
    else throw ConfigError("unknown key " + key);
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ostringstream header;
  header << serialize_model_config(ckpt.config);
  if (!ckpt.data_mean.empty()) {
    header << "data.mean = " << text::join_doubles(ckpt.data_mean) << '\n'
           << "data.std = " << text::join_doubles(ckpt.data_std) << '\n';
  }
  if (!ckpt.columns.empty()) {
    header << "data.columns = ";
    for (std::size_t i = 0; i < ckpt.columns.size(); ++i) {
      header << (i ? "," : "") << ckpt.columns[i];
    }
    header << '\n';
  }
  const std::string head = header.str();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  put<std::uint64_t>(out, head.size());
  out.write(head.data(), static_cast<std::streamsize>(head.size()));

  const auto named = ckpt.params.named_parameters();
  const std::size_t extra = ckpt.params.layers.size() * 4;
  put<std::uint64_t>(out, named.size() + extra);
  for (const auto& [name, t] : named) put_tensor(out, name, t.shape(), t.data());
  for (std::size_t i = 0; i < ckpt.params.layers.size(); ++i) {
    const auto& layer = ckpt.params.layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    const Shape s{layer.norm1_state.running_mean.size()};
    put_tensor(out, prefix + "norm1_running_mean", s, layer.norm1_state.running_mean);
    put_tensor(out, prefix + "norm1_running_var", s, layer.norm1_state.running_var);
    put_tensor(out, prefix + "norm2_running_mean", s, layer.norm2_state.running_mean);
    put_tensor(out, prefix + "norm2_running_var", s, layer.norm2_state.running_var);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) throw NotFoundError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::string where = path.string();

  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic) throw ParseError(where + ": not a GridTST checkpoint (bad magic)");

  const auto head_len = get<std::uint64_t>(in, where);
  if (head_len > (1u << 24)) throw ParseError(where + ": implausible header length");
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw ParseError(where + ": truncated header");

  Checkpoint ckpt;
  ckpt.config = parse_model_config(head);
  const auto kv = parse_lines(head);
  if (auto it = kv.find("data.mean"); it != kv.end()) {
    for (const auto& s : text::split(it->second, ',')) {
      ckpt.data_mean.push_back(text::parse_double(s, "data.mean"));
    }
  }
  if (auto it = kv.find("data.std"); it != kv.end()) {
    for (const auto& s : text::split(it->second, ',')) {
      ckpt.data_std.push_back(text::parse_double(s, "data.std"));
    }
  }
  if (auto it = kv.find("data.columns"); it != kv.end()) ckpt.columns = text::split(it->second, ',');
  if (ckpt.data_mean.size() != ckpt.data_std.size()) {
    throw ParseError(where + ": data.mean and data.std lengths differ");
  }

  std::map<std::string, RawTensor> tensors;
  const auto count = get<std::uint64_t>(in, where);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, where);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    RawTensor raw;
    const auto rank = get<std::uint32_t>(in, where);
    for (std::uint32_t r = 0; r < rank; ++r) raw.shape.push_back(get<std::uint64_t>(in, where));
    raw.data.resize(numel(raw.shape));
    in.read(reinterpret_cast<char*>(raw.data.data()),
            static_cast<std::streamsize>(raw.data.size() * sizeof(double)));
    if (!in) throw ParseError(where + ": truncated tensor " + name);
    tensors.emplace(std::move(name), std::move(raw));
  }

  // Build a parameter skeleton of the right shapes, then overwrite it.
  ckpt.params = build(ckpt.config);
  auto fill = [&](const std::string& name, std::span<double> dst, const Shape& shape) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError(where + ": missing tensor " + name);
    if (it->second.shape != shape) {
      throw ParseError(where + ": tensor " + name + " has shape " + shape_str(it->second.shape) +
                       ", expected " + shape_str(shape));
    }
    std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
  };
  for (auto& [name, t] : ckpt.params.named_parameters()) {
    Tensor handle = t;
    fill(name, handle.mutable_data(), t.shape());
  }
  for (std::size_t i = 0; i < ckpt.params.layers.size(); ++i) {
    auto& layer = ckpt.params.layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    const Shape s{layer.norm1_state.running_mean.size()};
    fill(prefix + "norm1_running_mean", layer.norm1_state.running_mean, s);
    fill(prefix + "norm1_running_var", layer.norm1_state.running_var, s);
    fill(prefix + "norm2_running_mean", layer.norm2_state.running_mean, s);
    fill(prefix + "norm2_running_var", layer.norm2_state.running_var, s);
  }
  return ckpt;
}

}  // namespace gridtst
