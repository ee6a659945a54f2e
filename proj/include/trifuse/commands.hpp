#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trifuse/data.hpp"
#include "trifuse/gradcheck.hpp"
#include "trifuse/runconfig.hpp"
#include "trifuse/train.hpp"

namespace trifuse::cmd {

// Names printed in reports, in label order.
const std::vector<std::string>& eri_class_names();
const std::vector<std::string>& expr_class_names();

struct SynthArgs {
    std::filesystem::path out_dir;
    SynthOptions options;
};

struct TrainArgs {
    std::filesystem::path config_path;
    std::filesystem::path out_dir;
    std::optional<std::uint64_t> seed_override;
};

struct EvalArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::string split = "val";
    std::optional<std::filesystem::path> report_path;
};

struct PredictArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::string split = "test";
    std::filesystem::path out_path;
};

struct EnsembleArgs {
    std::vector<std::filesystem::path> checkpoints;
    std::filesystem::path manifest;
    std::string split = "val";
    std::optional<std::filesystem::path> report_path;
};

struct AblateArgs {
    std::filesystem::path config_path;
    std::filesystem::path out_dir;
    std::optional<std::uint64_t> seed_override;
    bool parallel = true;
};

struct GradcheckArgs {
    std::size_t dim = 8;
    std::size_t seq_len = 4;
    std::size_t heads = 2;
    double eps = 3e-4;
    double threshold = 1e-4;
    // Test hook: bias added to every analytic gradient of the named op so the
    // failure path can be exercised.
    std::string corrupt_op;
};

// The gradient-check registry: every differentiable op once, plus the
// composed forward + loss paths.
std::vector<ad::GradCheckResult> gradcheck_all(const GradcheckArgs& args);

int run_synth(const SynthArgs& args);
int run_train(const TrainArgs& args);
int run_eval(const EvalArgs& args);
int run_predict(const PredictArgs& args);
int run_ensemble(const EnsembleArgs& args);
int run_ablate(const AblateArgs& args);
int run_gradcheck(const GradcheckArgs& args);

// Maps an exception to its CLI exit code, printing the message to stderr.
int exit_code_for(const std::exception& e);

// --- helpers shared with tests -----------------------------------------------

struct TrainOutcome {
    double best_metric = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::size_t clip_events_total = 0;
    std::filesystem::path checkpoint_path;
    std::filesystem::path history_path;
};

// Loads the manifest + dataset for a run config and trains into out_dir,
// writing checkpoint.fusn, history.jsonl, config.ini, and metrics.json.
TrainOutcome train_to_dir(const RunConfig& config, const std::filesystem::path& config_dir,
                          const std::filesystem::path& out_dir);

// Evaluation report serialization (structured, parse-stable).
std::string report_to_json(const EvalReport& report, const std::string& split);
EvalReport report_from_json(const std::string& text);

struct AblationRow {
    std::string variant;
    bool class_loss = true;
    bool ema = true;
    bool l2 = true;
    double metric = 0.0;
};

std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace trifuse::cmd
