#pragma once

// Flat `section.key=value` run configuration shared by the CLI and the
// checkpoint config echo.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metammf/training.hpp"

namespace metammf {

struct RunConfig {
  TrainConfig train;
  std::string data_dir;
  std::string out_dir;
  std::vector<std::size_t> eval_ks{10, 20};

  // Throws ConfigError for an unknown key or unparsable value.
  void set(std::string_view key, std::string_view value);
  // Throws ConfigError listing every out-of-range value.
  void validate() const;
  // Every key in a fixed order, one `key=value` per line.
  std::string to_text() const;

  static const std::vector<std::string>& keys();
};

// Parses `key=value` lines ('#' comments and blank lines allowed), then
// applies `overrides` (each `key=value`). All problems are collected and
// reported together in one ConfigError.
RunConfig parse_run_config(std::string_view text, std::span<const std::string> overrides = {});
RunConfig load_run_config(const std::filesystem::path& file, std::span<const std::string> overrides = {});

std::vector<std::size_t> parse_k_list(std::string_view text);

}  // namespace metammf
