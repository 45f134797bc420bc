#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vulnaudit/graph_build.hpp"
#include "vulnaudit/model.hpp"

namespace vulnaudit {

/// Trained model plus everything inference needs to reproduce its inputs.
struct Checkpoint {
    ModelParams params;
    LogNormStats norm_stats;
    std::vector<std::string> categories;
    TrainConfig config;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Fields missing from `j` keep their value from `defaults`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

/// Rounds every parameter to float32 precision so that the in-memory model
/// equals what a checkpoint stores.
void round_to_f32(ModelParams& params);

/// Writes `checkpoint.json` and one `<tensor>.f32` blob per tensor in declared
/// order. Parameters are stored as float32.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace vulnaudit
