#pragma once

// Flat little-endian weight file:
//   "FSCK" | u32 version | u64 config hash | u32 config text length | config text
//   | u32 record count | records
// record: u32 name length | name | u32 rank | u64 extents[rank] | f64 payload

#include <cstdint>
#include <filesystem>

#include "flowsteer/models.hpp"

namespace flowsteer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Model& model);

/// Overwrites the parameters of `model` in place. Throws CheckpointMismatch when
/// the stored config hash, names, or shapes disagree with the model, and
/// ParseError on a malformed file.
void load_checkpoint(const std::filesystem::path& path, Model& model);

/// Reads only the header and returns the stored model config.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace flowsteer
