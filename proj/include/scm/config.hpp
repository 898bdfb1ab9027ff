#pragma once

#include <map>
#include <string>
#include <string_view>

#include "scm/model.hpp"
#include "scm/ranking.hpp"

namespace scm {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_path;
  std::string test_path;
  std::string out_dir = ".";

  friend bool operator==(const RunConfig& a, const RunConfig& b);
};

/// Throws ConfigError on invalid combinations (width not divisible by heads,
/// poly without codes, batch below 2, ...).
void validate(const RunConfig& config);

/// Flat "key=value" lines in a fixed key order; doubles are written with 17
/// significant digits so parsing restores them exactly.
std::string serialize(const RunConfig& config);
/// Applies key=value lines on top of `base`. Blank lines and '#' comments are
/// skipped; unknown keys and malformed values raise ConfigError.
RunConfig parse_config(std::string_view text, RunConfig base = {});
/// One key=value assignment (the same keys as the file format).
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Hex CRC-32 of the model and training settings (paths excluded).
std::string config_hash(const RunConfig& config);
std::string content_hash(std::string_view bytes);

}  // namespace scm
