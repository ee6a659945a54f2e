#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "trifuse/matrix.hpp"
#include "trifuse/model.hpp"

namespace trifuse {

// Model checkpoint: magic "FUSN", u32 version, length-prefixed config text,
// then named parameter blobs (u32 name length, name bytes, u32 rows, u32
// cols, row-major float64 little-endian). The smoothed weight set is stored
// alongside the raw one under "ema."-prefixed names.
struct Checkpoint {
    ModelConfig config;
    bool eval_uses_ema = true;
    std::vector<std::pair<std::string, Matrix>> params;
    std::vector<std::pair<std::string, Matrix>> ema;

    // Verbatim config text, kept so write -> read -> write is byte-identical.
    std::string config_text;
};

std::string encode_model_config(const ModelConfig& config, bool eval_uses_ema);
std::pair<ModelConfig, bool> decode_model_config(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const ModelConfig& config, bool eval_uses_ema,
                           const model::ModelParams& params, const std::vector<Matrix>& ema);

// Instantiates parameters from the named blobs, verifying names and shapes.
model::ModelParams params_from_checkpoint(const Checkpoint& checkpoint);
// The weight set evaluation should use (smoothed when eval_uses_ema).
model::ModelParams eval_params_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace trifuse
