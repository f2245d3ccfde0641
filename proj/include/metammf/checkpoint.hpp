#pragma once

// Binary checkpoint container.
//
//   "MMFC1"
//   u64 config_len, config bytes (`key=value` lines: run config + shape.*)
//   u64 array_count
//   per array: u32 name_len, name, u32 rank, rank x u64 dims
//   payload: every array's values as IEEE-754 doubles, in manifest order
//
// All integers and doubles are little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "metammf/model.hpp"
#include "metammf/run_config.hpp"

namespace metammf {

struct Checkpoint {
  RunConfig config;
  Model model;
};

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const RunConfig& config);
// Throws FormatError on bad magic, length mismatch or manifest/model
// disagreement, ConfigError on unknown config keys.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& file, const Model& model, const RunConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& file);
// Also throws ModeError if the stored fusion mode differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& file, FusionMode expected);

}  // namespace metammf
