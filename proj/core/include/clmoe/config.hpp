// SPDX-License-Identifier: Apache-2.0
//
// A small subset of TOML: `key = value` lines with `#` comments, optional
// `[stream]` section, values that are integers, floats, booleans or
// double-quoted strings. Top-level keys are TrainConfig fields; keys under
// `[stream]` are SyntheticStreamSpec fields.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include "clmoe/continual_trainer.hpp"
#include "clmoe/task_stream.hpp"

namespace clmoe {

using ConfigValue = std::variant<bool, std::int64_t, double, std::string>;

struct ConfigEntry {
  ConfigValue value;
  std::size_t line = 0;
};

struct FlatConfig {
  std::string source;
  std::map<std::string, ConfigEntry> entries;  // "key" or "stream.key"
};

/// ParseError with the line number on malformed input or duplicate keys.
FlatConfig parse_flat_toml(const std::string& text, const std::string& source);
FlatConfig load_flat_toml(const std::filesystem::path& path);

/// Applies the top-level keys to `config` and the [stream] keys to `spec`
/// (when given). Unknown keys and type mismatches are ValidationErrors.
void apply_config(const FlatConfig& file, TrainConfig& config, SyntheticStreamSpec* spec = nullptr);

}  // namespace clmoe
