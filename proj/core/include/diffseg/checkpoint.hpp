#pragma once

#include <filesystem>
#include <optional>

#include "diffseg/model.hpp"

namespace diffseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: magic "DIFFSEG\0", u32 version, config record, u32 parameter
/// count, then per parameter: u32 name length, name bytes, u32 rank, u64
/// extents, little-endian f64 values.
void save_checkpoint(const DenoiserModel& model, const std::filesystem::path& path);

/// Throws FormatError on a bad header, version mismatch, or a parameter set
/// that does not fit the embedded config. When `expected_variant` is given, a
/// checkpoint of another variant is rejected with FormatError.
DenoiserModel load_checkpoint(const std::filesystem::path& path,
                              std::optional<Variant> expected_variant = std::nullopt);

/// Reads only the config record.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace diffseg
