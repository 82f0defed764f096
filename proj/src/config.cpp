// SPDX-License-Identifier: Apache-2.0

#include "gridtst/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "gridtst/error.hpp"
#include "gridtst/text.hpp"

namespace gridtst {

namespace {

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

template <typename T>
Field size_field(T RunConfig::*section, std::size_t T::*member) {
  return {[=](const RunConfig& c) { return std::to_string(c.*section.*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*section.*member = static_cast<std::size_t>(text::parse_u64(v, k));
          }};
}

template <typename T>
Field double_field(T RunConfig::*section, double T::*member) {
  return {[=](const RunConfig& c) { return text::format_double(c.*section.*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*section.*member = text::parse_double(v, k);
          }};
}

Field adam_field(double AdamConfig::*member) {
  return {[=](const RunConfig& c) { return text::format_double(c.train.adam.*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.train.adam.*member = text::parse_double(v, k);
          }};
}

// Ordered so serialize() output is stable.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"data.path",
       {[](const RunConfig& c) { return c.data.path; },
        [](RunConfig& c, const std::string&, const std::string& v) { c.data.path = v; }}},
      {"data.name",
       {[](const RunConfig& c) { return c.data.name; },
        [](RunConfig& c, const std::string&, const std::string& v) { c.data.name = v; }}},
      {"data.drop_columns",
       {[](const RunConfig& c) { return join(c.data.csv.drop_columns); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.data.csv.drop_columns = text::split(v, ',');
        }}},
      {"data.drop_indices",
       {[](const RunConfig& c) {
          std::vector<std::string> parts;
          for (auto i : c.data.csv.drop_indices) parts.push_back(std::to_string(i));
          return join(parts);
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.data.csv.drop_indices.clear();
          for (const auto& p : text::split(v, ',')) {
            c.data.csv.drop_indices.push_back(static_cast<std::size_t>(text::parse_u64(p, k)));
          }
        }}},
      {"data.value_columns",
       {[](const RunConfig& c) { return join(c.data.csv.value_columns); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.data.csv.value_columns = text::split(v, ',');
        }}},
      {"data.split",
       {[](const RunConfig& c) { return c.data.split.str(); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          const bool allow = c.data.split.allow_empty_test;
          c.data.split = SplitSpec::parse(v);
          c.data.split.allow_empty_test = allow;
        }}},
      {"data.allow_empty_test",
       {[](const RunConfig& c) { return std::string(c.data.split.allow_empty_test ? "true" : "false"); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.data.split.allow_empty_test = text::parse_bool(v, k);
        }}},
      {"data.borrow_lookback",
       {[](const RunConfig& c) { return std::string(c.data.borrow_lookback ? "true" : "false"); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.data.borrow_lookback = text::parse_bool(v, k);
        }}},
      {"model.lookback", size_field(&RunConfig::model, &ModelConfig::lookback)},
      {"model.horizon", size_field(&RunConfig::model, &ModelConfig::horizon)},
      {"model.patch_len", size_field(&RunConfig::model, &ModelConfig::patch_len)},
      {"model.stride", size_field(&RunConfig::model, &ModelConfig::stride)},
      {"model.d_model", size_field(&RunConfig::model, &ModelConfig::d_model)},
      {"model.heads", size_field(&RunConfig::model, &ModelConfig::heads)},
      {"model.layers", size_field(&RunConfig::model, &ModelConfig::layers)},
      {"model.d_ff", size_field(&RunConfig::model, &ModelConfig::d_ff)},
      {"model.dropout", double_field(&RunConfig::model, &ModelConfig::dropout)},
      {"model.mode",
       {[](const RunConfig& c) { return std::string(mode_name(c.model.mode)); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.model.mode = parse_mode(v);
        }}},
      {"model.norm",
       {[](const RunConfig& c) { return std::string(norm_kind_name(c.model.norm)); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.model.norm = parse_norm_kind(v);
        }}},
      {"model.bn_momentum", double_field(&RunConfig::model, &ModelConfig::bn_momentum)},
      {"model.bn_eps", double_field(&RunConfig::model, &ModelConfig::bn_eps)},
      {"train.lr", adam_field(&AdamConfig::lr)},
      {"train.beta1", adam_field(&AdamConfig::beta1)},
      {"train.beta2", adam_field(&AdamConfig::beta2)},
      {"train.eps", adam_field(&AdamConfig::eps)},
      {"train.weight_decay", adam_field(&AdamConfig::weight_decay)},
      {"train.batch_size", size_field(&RunConfig::train, &TrainConfig::batch_size)},
      {"train.epochs", size_field(&RunConfig::train, &TrainConfig::epochs)},
      {"train.patience", size_field(&RunConfig::train, &TrainConfig::patience)},
      {"train.clip_norm", double_field(&RunConfig::train, &TrainConfig::clip_norm)},
      {"train.sample_ratio", double_field(&RunConfig::train, &TrainConfig::sample_ratio)},
      {"train.max_steps", size_field(&RunConfig::train, &TrainConfig::max_steps)},
      {"run.seed",
       {[](const RunConfig& c) { return std::to_string(c.seed); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.seed = text::parse_u64(v, k);
        }}},
      {"run.output_dir",
       {[](const RunConfig& c) { return c.output_dir; },
        [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }}},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return names;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    // Inline comments need whitespace before the '#'.
    for (std::size_t i = 1; i < t.size(); ++i) {
      if (t[i] == '#' && (t[i - 1] == ' ' || t[i - 1] == '\t')) {
        t = text::trim(t.substr(0, i));
        break;
      }
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    config.set(std::string(text::trim(t.substr(0, eq))), std::string(text::trim(t.substr(eq + 1))));
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) throw NotFoundError("config file not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [name, f] : fields()) os << name << " = " << f.get(*this) << '\n';
  return os.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config snapshot " + path.string());
  out << serialize();
  if (!out) throw IoError("failed writing " + path.string());
}

ModelConfig RunConfig::resolved_model(std::size_t variates) const {
  ModelConfig m = model;
  m.variates = variates;
  m.seed = seed;
  return m;
}

TrainConfig RunConfig::resolved_train() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

std::string RunConfig::dataset_name() const {
  if (!data.name.empty()) return data.name;
  return std::filesystem::path(data.path).stem().string();
}

}  // namespace gridtst
