#pragma once

#include <string>

#include "poseg/train.hpp"

// Single-file training archive: a JSON header (config, epoch, seed, format
// version, parameter index) followed by one little-endian float32 blob per
// parameter and per optimizer moment. Save -> load -> save is byte-identical.
namespace poseg {

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::string& path);

// Rebuilds the model from the archived config and restores every parameter
// and optimizer moment. Throws MissingFile, VersionMismatch (unsupported
// format_version) or CorruptArchive (bad magic, truncation, index mismatch).
TrainState load_checkpoint(const std::string& path);

// Guard for callers that require a checkpoint to match an expected
// architecture; throws VersionMismatch when the configs differ.
void require_same_model(const ModelConfig& want, const ModelConfig& got);

}  // namespace poseg
