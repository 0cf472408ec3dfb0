#pragma once

#include <string>
#include <vector>

#include "tabret/model.hpp"

namespace tabret {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointMeta {
    int format_version = kCheckpointFormatVersion;
    uint64_t seed = 0;
    std::vector<std::string> phase_history;
    std::string precision = "double";  // blob storage width: "single" | "double"
};

// Writes <base>.json (manifest) and <base>.bin (little-endian IEEE-754 blob).
// Both writes go through a temp file + rename.
void save_checkpoint(const TabRetModel& model, const CheckpointMeta& meta,
                     const std::string& base_path);

struct LoadedCheckpoint {
    TabRetModel model;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& base_path);

}  // namespace tabret
