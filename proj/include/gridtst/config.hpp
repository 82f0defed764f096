// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat text file of `section.key = value` lines ('#'
// starts a comment). Command-line overrides use the same dotted keys.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gridtst/data.hpp"
#include "gridtst/model.hpp"
#include "gridtst/train.hpp"

namespace gridtst {

struct DataConfig {
  std::string path;
  std::string name;  // defaults to the file stem
  CsvOptions csv;
  SplitSpec split;
  // Prefix val/test with the last lookback steps of the preceding split.
  bool borrow_lookback = false;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  std::string output_dir = "runs/default";
  std::uint64_t seed = 2024;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  // Throws ConfigError for unknown keys or unparseable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Model config with the seed and variate count filled in.
  ModelConfig resolved_model(std::size_t variates) const;
  TrainConfig resolved_train() const;
  std::string dataset_name() const;
};

}  // namespace gridtst
