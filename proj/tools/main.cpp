#include <CLI11.hpp>

#include "trifuse/commands.hpp"

namespace {

using namespace trifuse;

int dispatch(CLI::App& app, const std::function<int()>& fn) {
    (void)app;
    try {
        return fn();
    } catch (const std::exception& e) {
        return cmd::exit_code_for(e);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-visual fusion toolkit: emotional-reaction-intensity regression and "
                 "expression classification on precomputed feature sequences"};
    app.require_subcommand(1);

    cmd::SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a planted-signal dataset");
    synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
    synth_cmd->add_option("--n", synth.options.n, "Number of samples");
    synth_cmd->add_option("--seed", synth.options.seed, "Generator seed");
    synth_cmd->add_option("--noise", synth.options.noise, "Per-frame noise level");
    synth_cmd->add_option("--mode", synth.options.mode, "eri or expr");
    synth_cmd->add_option("--audio-dim", synth.options.audio_dim, "Audio feature width");
    synth_cmd->add_option("--visual-dim", synth.options.visual_dim, "Visual feature width");
    synth_cmd->add_option("--len-min", synth.options.len_min, "Shortest raw sequence");
    synth_cmd->add_option("--len-max", synth.options.len_max, "Longest raw sequence");

    cmd::TrainArgs train;
    std::uint64_t train_seed = 0;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    train_cmd->add_option("--config", train.config_path, "Run config (ini)")->required();
    train_cmd->add_option("--out", train.out_dir, "Output directory")->required();
    auto* train_seed_opt =
        train_cmd->add_option("--seed", train_seed, "Override the config seed");

    cmd::EvalArgs eval;
    std::string eval_report;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval.manifest, "Dataset manifest")->required();
    eval_cmd->add_option("--split", eval.split, "train, val, or test");
    eval_cmd->add_option("--report", eval_report, "Write the JSON report here");

    cmd::PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Write per-sample predictions");
    predict_cmd->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required();
    predict_cmd->add_option("--manifest", predict.manifest, "Dataset manifest")->required();
    predict_cmd->add_option("--split", predict.split, "train, val, or test");
    predict_cmd->add_option("--out", predict.out_path, "Predictions JSON path")->required();

    cmd::EnsembleArgs ensemble;
    std::string ensemble_report;
    auto* ensemble_cmd =
        app.add_subcommand("ensemble", "Average predictions of several checkpoints, then score");
    ensemble_cmd->add_option("--checkpoint", ensemble.checkpoints, "Checkpoint (repeatable)")
        ->required()
        ->take_all();
    ensemble_cmd->add_option("--manifest", ensemble.manifest, "Dataset manifest")->required();
    ensemble_cmd->add_option("--split", ensemble.split, "train, val, or test");
    ensemble_cmd->add_option("--report", ensemble_report, "Write the JSON report here");

    cmd::AblateArgs ablate;
    std::uint64_t ablate_seed = 0;
    auto* ablate_cmd = app.add_subcommand(
        "ablate", "Train the all-on recipe plus each trick toggled off, same seed");
    ablate_cmd->add_option("--config", ablate.config_path, "Run config (ini)")->required();
    ablate_cmd->add_option("--out", ablate.out_dir, "Output directory")->required();
    auto* ablate_seed_opt =
        ablate_cmd->add_option("--seed", ablate_seed, "Override the config seed");
    ablate_cmd->add_flag("--serial", [&ablate](std::int64_t) { ablate.parallel = false; },
                         "Run the four variants sequentially");

    cmd::GradcheckArgs gradcheck;
    auto* gradcheck_cmd = app.add_subcommand(
        "gradcheck", "Check every differentiable op against central finite differences");
    gradcheck_cmd->add_option("--dim", gradcheck.dim, "Embedding width (<= 16)");
    gradcheck_cmd->add_option("--seq", gradcheck.seq_len, "Sequence length (<= 8)");
    gradcheck_cmd->add_option("--heads", gradcheck.heads, "Attention heads");
    gradcheck_cmd->add_option("--eps", gradcheck.eps, "Finite-difference step");
    gradcheck_cmd->add_option("--corrupt-op", gradcheck.corrupt_op,
                              "Test hook: bias the named op's gradient")
        ->group("");  // hidden

    CLI11_PARSE(app, argc, argv);

    if (synth_cmd->parsed()) return dispatch(app, [&] { return cmd::run_synth(synth); });
    if (train_cmd->parsed()) {
        if (train_seed_opt->count() > 0) train.seed_override = train_seed;
        return dispatch(app, [&] { return cmd::run_train(train); });
    }
    if (eval_cmd->parsed()) {
        if (!eval_report.empty()) eval.report_path = eval_report;
        return dispatch(app, [&] { return cmd::run_eval(eval); });
    }
    if (predict_cmd->parsed()) return dispatch(app, [&] { return cmd::run_predict(predict); });
    if (ensemble_cmd->parsed()) {
        if (!ensemble_report.empty()) ensemble.report_path = ensemble_report;
        return dispatch(app, [&] { return cmd::run_ensemble(ensemble); });
    }
    if (ablate_cmd->parsed()) {
        if (ablate_seed_opt->count() > 0) ablate.seed_override = ablate_seed;
        return dispatch(app, [&] { return cmd::run_ablate(ablate); });
    }
    if (gradcheck_cmd->parsed()) return dispatch(app, [&] { return cmd::run_gradcheck(gradcheck); });
    return static_cast<int>(ExitCode::failure);
}
