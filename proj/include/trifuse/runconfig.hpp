#pragma once

#include <filesystem>
#include <string>

#include "trifuse/model.hpp"
#include "trifuse/train.hpp"

namespace trifuse {

// On-disk run configuration: sections [model], [train], [data] with
// key = value lines. Unspecified keys keep their defaults; unknown keys are
// rejected. Emission is canonical (fixed key order, full precision), so an
// emitted document parses back and re-emits byte-identically.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string manifest;  // [data] manifest = <path>
};

RunConfig parse_run_config(const std::string& text);
std::string emit_run_config(const RunConfig& config);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace trifuse
