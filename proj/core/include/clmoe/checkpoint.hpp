// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container, all integers little-endian:
//
//   "CLMOECKP"                        8-byte magic
//   u32 format_version
//   u64 manifest length, manifest     JSON (config, shapes, registry sets, order)
//   u32 block count, then per block:
//     u32 name length, name, u64 rows, u64 cols, rows*cols f64 (row-major)
//   u32 CRC-32 of every preceding byte
//
// The content is a pure function of the state (no timestamps), so
// save -> load -> save reproduces the same bytes.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "clmoe/continual_trainer.hpp"

namespace clmoe {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

std::string encode_checkpoint(const ContinualState& state);
/// IntegrityError on a bad magic, checksum, version or truncated body.
ContinualState decode_checkpoint(const std::string& bytes);

/// Atomic write (temp file + rename).
void save_checkpoint(const ContinualState& state, const std::filesystem::path& path);
ContinualState load_checkpoint(const std::filesystem::path& path);

}  // namespace clmoe
