// SPDX-License-Identifier: Apache-2.0

#include "gridtst/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "gridtst/error.hpp"

namespace gridtst {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    cells.push_back(trim(line.substr(begin, comma - begin)));
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return cells;
}

std::optional<double> parse_number(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

}  // namespace

TimeSeriesDataset make_dataset(std::string name, std::size_t timesteps, std::size_t channels,
                               std::vector<double> values) {
  if (channels == 0) throw ShapeError("dataset needs at least one variate");
  if (values.size() != timesteps * channels) {
    throw ShapeError("dataset values hold " + std::to_string(values.size()) + " cells, expected " +
                     std::to_string(timesteps) + " x " + std::to_string(channels));
  }
  TimeSeriesDataset ds;
  ds.name = std::move(name);
  ds.timesteps = timesteps;
  ds.channels = channels;
  ds.values = std::move(values);
  for (std::size_t n = 0; n < channels; ++n) ds.columns.push_back("v" + std::to_string(n));
  return ds;
}

TimeSeriesDataset TimeSeriesDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > timesteps) throw ShapeError("dataset slice out of range");
  TimeSeriesDataset out;
  out.name = name;
  out.frequency = frequency;
  out.columns = columns;
  out.channels = channels;
  out.timesteps = end - begin;
  out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * channels),
                    values.begin() + static_cast<std::ptrdiff_t>(end * channels));
  return out;
}

TimeSeriesDataset TimeSeriesDataset::select(const std::vector<std::size_t>& variates) const {
  TimeSeriesDataset out;
  out.name = name;
  out.frequency = frequency;
  out.timesteps = timesteps;
  out.channels = variates.size();
  for (auto v : variates) {
    if (v >= channels) throw ShapeError("variate index " + std::to_string(v) + " out of range");
    out.columns.push_back(v < columns.size() ? columns[v] : "v" + std::to_string(v));
  }
  out.values.resize(timesteps * variates.size());
  for (std::size_t t = 0; t < timesteps; ++t) {
    for (std::size_t k = 0; k < variates.size(); ++k) {
      out.values[t * variates.size() + k] = at(t, variates[k]);
    }
  }
  return out;
}

// ---- CSV -------------------------------------------------------------------

TimeSeriesDataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) {
    throw NotFoundError("dataset file not found: " + path.string());
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset file: " + path.string());

  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!trim(line).empty()) lines.push_back(std::move(line));
  }
  if (lines.empty()) throw ParseError(path.string() + ": file has no rows");

  const auto first = split_row(lines.front());
  const bool has_header =
      std::any_of(first.begin(), first.end(), [](std::string_view c) { return !parse_number(c); });
  const std::size_t width = first.size();

  std::vector<std::string> header;
  if (has_header) {
    for (auto c : first) header.emplace_back(c);
  }

  // Resolve which source columns become variates.
  std::vector<std::size_t> keep;
  if (!options.value_columns.empty()) {
    if (!has_header) {
      throw ConfigError(path.string() + ": value columns given by name but the file has no header");
    }
    for (const auto& name : options.value_columns) {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw ConfigError(path.string() + ": no column named '" + name + "'");
      keep.push_back(static_cast<std::size_t>(it - header.begin()));
    }
  } else {
    for (std::size_t c = 0; c < width; ++c) {
      const bool by_index = std::find(options.drop_indices.begin(), options.drop_indices.end(),
                                      c) != options.drop_indices.end();
      const bool by_name = has_header && std::find(options.drop_columns.begin(),
                                                   options.drop_columns.end(),
                                                   header[c]) != options.drop_columns.end();
      if (!by_index && !by_name) keep.push_back(c);
    }
  }
  if (keep.empty()) throw ConfigError(path.string() + ": no value columns left after dropping");

  TimeSeriesDataset ds;
  ds.name = path.stem().string();
  ds.channels = keep.size();
  for (auto c : keep) ds.columns.push_back(has_header ? header[c] : "v" + std::to_string(c));

  const std::size_t start = has_header ? 1 : 0;
  ds.values.reserve((lines.size() - start) * keep.size());
  for (std::size_t r = start; r < lines.size(); ++r) {
    const auto cells = split_row(lines[r]);
    if (cells.size() != width) {
      throw ParseError(path.string() + ": row " + std::to_string(r + 1) + " has " +
                       std::to_string(cells.size()) + " cells, expected " + std::to_string(width));
    }
    for (auto c : keep) {
      const auto where = path.string() + ": row " + std::to_string(r + 1) + ", column " +
                         std::to_string(c + 1) +
                         (has_header ? " ('" + header[c] + "')" : std::string());
      if (cells[c].empty()) throw ParseError(where + " is empty");
      const auto v = parse_number(cells[c]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError(where + " is not a finite number: '" + std::string(cells[c]) + "'");
      }
      ds.values.push_back(*v);
    }
  }
  ds.timesteps = lines.size() - start;
  if (ds.timesteps == 0) throw ParseError(path.string() + ": header only, no data rows");
  return ds;
}

void write_csv(const std::filesystem::path& path, const TimeSeriesDataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t n = 0; n < ds.channels; ++n) {
    out << (n ? "," : "") << (n < ds.columns.size() ? ds.columns[n] : "v" + std::to_string(n));
  }
  out << '\n';
  for (std::size_t t = 0; t < ds.timesteps; ++t) {
    for (std::size_t n = 0; n < ds.channels; ++n) out << (n ? "," : "") << ds.at(t, n);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---- splits ----------------------------------------------------------------

SplitSpec SplitSpec::parse(const std::string& text) {
  SplitSpec spec;
  int* fields[] = {&spec.train, &spec.val, &spec.test};
  std::size_t begin = 0;
  for (int i = 0; i < 3; ++i) {
    const auto colon = text.find(':', begin);
    if ((i < 2) != (colon != std::string::npos)) {
      throw ConfigError("split must look like train:val:test, got '" + text + "'");
    }
    const auto part = trim(std::string_view(text).substr(begin, colon - begin));
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), *fields[i]);
    if (ec != std::errc() || ptr != part.data() + part.size()) {
      throw ConfigError("split must look like train:val:test, got '" + text + "'");
    }
    begin = colon + 1;
  }
  return spec;
}

std::string SplitSpec::str() const {
  return std::to_string(train) + ":" + std::to_string(val) + ":" + std::to_string(test);
}

Splits chronological_split(const TimeSeriesDataset& ds, const SplitSpec& spec) {
  if (spec.train <= 0 || spec.val <= 0 || spec.test < 0) {
    throw ConfigError("split ratios must be positive, got " + spec.str());
  }
  Splits out;
  if (spec.test == 0) {
    if (!spec.allow_empty_test) {
      throw ConfigError("split " + spec.str() + " leaves no test data (set data.allow_empty_test)");
    }
    out.warnings.push_back("split " + spec.str() + " leaves the test split empty");
  }
  const std::size_t total = static_cast<std::size_t>(spec.train + spec.val + spec.test);
  const std::size_t train_end = ds.timesteps * static_cast<std::size_t>(spec.train) / total;
  const std::size_t val_end =
      ds.timesteps * static_cast<std::size_t>(spec.train + spec.val) / total;
  out.train = ds.slice(0, train_end);
  out.val = ds.slice(train_end, val_end);
  out.test = ds.slice(val_end, ds.timesteps);
  return out;
}

// ---- standardization -------------------------------------------------------

ColumnStats fit_column_stats(const TimeSeriesDataset& ds, std::vector<std::string>* warnings) {
  if (ds.timesteps == 0) throw ShapeError("cannot fit statistics on an empty split");
  ColumnStats stats;
  stats.mean.assign(ds.channels, 0.0);
  stats.std.assign(ds.channels, 0.0);
  const double count = static_cast<double>(ds.timesteps);
  for (std::size_t t = 0; t < ds.timesteps; ++t) {
    for (std::size_t n = 0; n < ds.channels; ++n) stats.mean[n] += ds.at(t, n);
  }
  for (auto& m : stats.mean) m /= count;
  for (std::size_t t = 0; t < ds.timesteps; ++t) {
    for (std::size_t n = 0; n < ds.channels; ++n) {
      const double d = ds.at(t, n) - stats.mean[n];
      stats.std[n] += d * d;
    }
  }
  for (std::size_t n = 0; n < ds.channels; ++n) {
    stats.std[n] = std::sqrt(stats.std[n] / count);
    if (!(stats.std[n] > 0.0)) {
      stats.std[n] = 1.0;
      if (warnings) {
        warnings->push_back("variate " + std::to_string(n) +
                            " is constant on the training split; std clamped to 1");
      }
    }
  }
  return stats;
}

TimeSeriesDataset apply_stats(const TimeSeriesDataset& ds, const ColumnStats& stats) {
  if (stats.mean.size() != ds.channels) throw ShapeError("statistics do not match variate count");
  TimeSeriesDataset out = ds;
  for (std::size_t t = 0; t < ds.timesteps; ++t) {
    for (std::size_t n = 0; n < ds.channels; ++n) {
      out.at(t, n) = (ds.at(t, n) - stats.mean[n]) / stats.std[n];
    }
  }
  return out;
}

TimeSeriesDataset invert_stats(const TimeSeriesDataset& ds, const ColumnStats& stats) {
  if (stats.mean.size() != ds.channels) throw ShapeError("statistics do not match variate count");
  TimeSeriesDataset out = ds;
  for (std::size_t t = 0; t < ds.timesteps; ++t) {
    for (std::size_t n = 0; n < ds.channels; ++n) {
      out.at(t, n) = ds.at(t, n) * stats.std[n] + stats.mean[n];
    }
  }
  return out;
}

Standardized standardize(const TimeSeriesDataset& train, const TimeSeriesDataset& val,
                         const TimeSeriesDataset& test) {
  Standardized out;
  out.stats = fit_column_stats(train, &out.warnings);
  out.train = apply_stats(train, out.stats);
  out.val = apply_stats(val, out.stats);
  out.test = apply_stats(test, out.stats);
  return out;
}

void write_stats_csv(const std::filesystem::path& path, const ColumnStats& stats) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "variate_index,mean,std\n" << std::setprecision(17);
  for (std::size_t n = 0; n < stats.mean.size(); ++n) {
    out << n << ',' << stats.mean[n] << ',' << stats.std[n] << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

ColumnStats read_stats_csv(const std::filesystem::path& path) {
  CsvOptions options;
  options.drop_columns.clear();
  const auto table = load_csv(path, options);
  if (table.channels != 3) throw ParseError(path.string() + ": expected variate_index,mean,std");
  ColumnStats stats;
  for (std::size_t t = 0; t < table.timesteps; ++t) {
    if (table.at(t, 0) != static_cast<double>(t)) {
      throw ParseError(path.string() + ": variate indices must be 0..N-1 in order");
    }
    stats.mean.push_back(table.at(t, 1));
    stats.std.push_back(table.at(t, 2));
  }
  return stats;
}

// ---- windows ---------------------------------------------------------------

TimeSeriesDataset with_lookback_prefix(const TimeSeriesDataset& previous,
                                       const TimeSeriesDataset& split, std::size_t lookback) {
  if (previous.channels != split.channels) throw ShapeError("splits disagree on variate count");
  const std::size_t take = std::min(lookback, previous.timesteps);
  TimeSeriesDataset out = previous.slice(previous.timesteps - take, previous.timesteps);
  out.values.insert(out.values.end(), split.values.begin(), split.values.end());
  out.timesteps += split.timesteps;
  return out;
}

std::size_t window_count(std::size_t timesteps, std::size_t lookback, std::size_t horizon) {
  if (timesteps < lookback + horizon) return 0;
  return timesteps - lookback - horizon + 1;
}

WindowSet::WindowSet(const TimeSeriesDataset& ds, std::size_t lookback, std::size_t horizon)
    : ds_(&ds), lookback_(lookback), horizon_(horizon) {
  if (lookback == 0 || horizon == 0) throw ConfigError("lookback and horizon must be positive");
  if (ds.timesteps < lookback + horizon) {
    throw ShapeError("split too short: " + std::to_string(ds.timesteps) +
                     " steps cannot host a window of lookback " + std::to_string(lookback) +
                     " + horizon " + std::to_string(horizon));
  }
  count_ = window_count(ds.timesteps, lookback, horizon);
}

WindowBatch WindowSet::batch(const std::vector<std::size_t>& starts,
                             const std::vector<std::size_t>* variates) const {
  std::vector<std::size_t> all;
  if (!variates) {
    all.resize(ds_->channels);
    std::iota(all.begin(), all.end(), 0);
  }
  const auto& cols = variates ? *variates : all;
  const std::size_t n = cols.size();
  for (auto c : cols) {
    if (c >= ds_->channels) throw ShapeError("variate index out of range");
  }
  const std::size_t b = starts.size();
  std::vector<double> x(b * lookback_ * n);
  std::vector<double> y(b * horizon_ * n);
  for (std::size_t i = 0; i < b; ++i) {
    if (starts[i] >= count_) throw ShapeError("window start out of range");
    for (std::size_t t = 0; t < lookback_; ++t) {
      for (std::size_t k = 0; k < n; ++k) {
        x[(i * lookback_ + t) * n + k] = ds_->at(starts[i] + t, cols[k]);
      }
    }
    for (std::size_t t = 0; t < horizon_; ++t) {
      for (std::size_t k = 0; k < n; ++k) {
        y[(i * horizon_ + t) * n + k] = ds_->at(starts[i] + lookback_ + t, cols[k]);
      }
    }
  }
  WindowBatch out;
  out.inputs = Tensor::from({b, lookback_, n}, std::move(x));
  out.targets = Tensor::from({b, horizon_, n}, std::move(y));
  if (variates) out.variate_index = *variates;
  out.starts = starts;
  return out;
}

std::vector<std::size_t> WindowSet::order(Rng* rng) const {
  std::vector<std::size_t> idx(count_);
  std::iota(idx.begin(), idx.end(), 0);
  if (rng) rng->shuffle(idx);
  return idx;
}

std::vector<double> window_values(const TimeSeriesDataset& ds, std::size_t start,
                                  std::size_t length) {
  if (start + length > ds.timesteps) throw ShapeError("window exceeds dataset length");
  return {ds.values.begin() + static_cast<std::ptrdiff_t>(start * ds.channels),
          ds.values.begin() + static_cast<std::ptrdiff_t>((start + length) * ds.channels)};
}

}  // namespace gridtst
