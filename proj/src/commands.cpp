#include "trifuse/commands.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "trifuse/gradcheck.hpp"

namespace trifuse::cmd {

using ordered_json = nlohmann::ordered_json;

namespace {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("TRIFUSE_LOG");
        if (!env) return LogLevel::info;
        const std::string v(env);
        if (v == "quiet") return LogLevel::quiet;
        if (v == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::info) std::cerr << msg << "\n";
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

LoadOptions load_options_for(const ModelConfig& config) {
    LoadOptions options;
    options.seq_len = config.seq_len;
    options.audio_in = config.audio_in;
    options.visual_in = config.visual_in;
    return options;
}

Dataset dataset_for_manifest(const std::filesystem::path& manifest_path,
                             const ModelConfig& config) {
    if (!std::filesystem::exists(manifest_path)) {
        throw DataError("manifest not found: '" + manifest_path.string() + "'");
    }
    const Manifest manifest = load_manifest(manifest_path);
    const std::string config_mode = to_string(config.head_mode);
    if (manifest.mode != config_mode) {
        throw DataError("mode mismatch: checkpoint/config is '" + config_mode +
                        "' but manifest is '" + manifest.mode + "'");
    }
    return load_dataset(manifest, manifest_path.parent_path(), load_options_for(config));
}

std::string history_to_jsonl(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    for (const auto& r : history) {
        ordered_json line;
        line["epoch"] = r.epoch;
        line["loss_total"] = r.loss_total;
        line["loss_reg"] = r.loss_reg;
        line["loss_class"] = r.loss_class;
        line["val_per_class"] = r.val_per_class;
        line["val_metric"] = r.val_metric;
        line["clip_events"] = r.clip_events;
        line["improved"] = r.improved;
        out << line.dump() << "\n";
    }
    return out.str();
}

}  // namespace

const std::vector<std::string>& eri_class_names() {
    static const std::vector<std::string> names = {
        "adoration", "amusement", "anxiety", "disgust", "empathic_pain", "fear", "surprise"};
    return names;
}

const std::vector<std::string>& expr_class_names() {
    static const std::vector<std::string> names = {"anger",    "disgust", "fear",
                                                   "happiness", "sadness", "surprise",
                                                   "neutral",  "other"};
    return names;
}

std::string report_to_json(const EvalReport& report, const std::string& split) {
    ordered_json j;
    j["mode"] = report.mode;
    j["split"] = split;
    j["n"] = report.n;
    j["classes"] = report.mode == "eri" ? eri_class_names() : expr_class_names();
    j["per_class"] = report.per_class;
    j["mean"] = report.mean;
    j["zero_variance_columns"] = report.zero_variance_columns;
    return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
    const auto j = ordered_json::parse(text);
    EvalReport report;
    report.mode = j.at("mode").get<std::string>();
    report.n = j.at("n").get<std::size_t>();
    report.per_class = j.at("per_class").get<std::vector<double>>();
    report.mean = j.at("mean").get<double>();
    report.zero_variance_columns =
        j.at("zero_variance_columns").get<std::vector<std::size_t>>();
    return report;
}

TrainOutcome train_to_dir(const RunConfig& config, const std::filesystem::path& config_dir,
                          const std::filesystem::path& out_dir) {
    std::filesystem::path manifest_path = config.manifest;
    if (manifest_path.is_relative()) manifest_path = config_dir / manifest_path;
    const Dataset dataset = dataset_for_manifest(manifest_path, config.model);

    log_info("train: " + std::to_string(dataset.train.size()) + " train / " +
             std::to_string(dataset.val.size()) + " val / " +
             std::to_string(dataset.test.size()) + " test samples");

    const TrainResult result = train(dataset, config.model, config.train);

    std::filesystem::create_directories(out_dir);
    TrainOutcome outcome;
    outcome.best_metric = result.best_metric;
    outcome.best_epoch = result.best_epoch;
    outcome.epochs_run = result.history.size();
    outcome.clip_events_total = result.clip_events_total;
    outcome.checkpoint_path = out_dir / "checkpoint.fusn";
    outcome.history_path = out_dir / "history.jsonl";

    save_checkpoint(outcome.checkpoint_path, result.best);
    write_text_file(outcome.history_path, history_to_jsonl(result.history));
    save_run_config(out_dir / "config.ini", config);

    ordered_json metrics;
    metrics["best_epoch"] = result.best_epoch;
    metrics["best_val_metric"] = result.best_metric;
    metrics["val_per_class"] =
        result.history.empty() ? std::vector<double>{}
                               : result.history[result.best_epoch - 1].val_per_class;
    metrics["epochs_run"] = result.history.size();
    metrics["clip_events_total"] = result.clip_events_total;
    metrics["eval_weights"] = config.train.use_ema ? "ema" : "raw";
    metrics["seed"] = config.train.seed;
    write_text_file(out_dir / "metrics.json", metrics.dump(2) + "\n");

    log_info("train: best val metric " + std::to_string(result.best_metric) + " at epoch " +
             std::to_string(result.best_epoch) + " (" + std::to_string(result.history.size()) +
             " epochs run)");
    return outcome;
}

int run_synth(const SynthArgs& args) {
    const Manifest manifest = synth_generate(args.options, args.out_dir);
    std::size_t train_n = 0, val_n = 0, test_n = 0;
    for (const auto& e : manifest.entries) {
        if (e.split == "train") ++train_n;
        else if (e.split == "val") ++val_n;
        else ++test_n;
    }
    std::cout << "synth: wrote " << manifest.entries.size() << " samples (" << train_n
              << " train / " << val_n << " val / " << test_n << " test) under "
              << args.out_dir.string() << "\n";
    return 0;
}

int run_train(const TrainArgs& args) {
    RunConfig config = load_run_config(args.config_path);
    if (args.seed_override) config.train.seed = *args.seed_override;
    const TrainOutcome outcome =
        train_to_dir(config, args.config_path.parent_path(), args.out_dir);
    std::cout << "train: best val metric " << outcome.best_metric << " at epoch "
              << outcome.best_epoch << "; checkpoint " << outcome.checkpoint_path.string()
              << "\n";
    return 0;
}

int run_eval(const EvalArgs& args) {
    const Checkpoint checkpoint = load_checkpoint(args.checkpoint);
    const Dataset dataset = dataset_for_manifest(args.manifest, checkpoint.config);
    const auto& samples = dataset.split(args.split);
    if (samples.empty()) throw DataError("eval: split '" + args.split + "' is empty");
    const model::ModelParams params = eval_params_from_checkpoint(checkpoint);
    const EvalReport report = evaluate(samples, params, checkpoint.config);

    const auto& names = report.mode == "eri" ? eri_class_names() : expr_class_names();
    for (std::size_t i = 0; i < report.per_class.size(); ++i) {
        std::cout << names[i] << ": " << report.per_class[i] << "\n";
    }
    std::cout << (report.mode == "eri" ? "mean_pearson: " : "macro_f1: ") << report.mean << "\n";
    if (args.report_path) write_text_file(*args.report_path, report_to_json(report, args.split));
    return 0;
}

int run_predict(const PredictArgs& args) {
    const Checkpoint checkpoint = load_checkpoint(args.checkpoint);
    const Dataset dataset = dataset_for_manifest(args.manifest, checkpoint.config);
    const auto& samples = dataset.split(args.split);
    if (samples.empty()) throw DataError("predict: split '" + args.split + "' is empty");
    const model::ModelParams params = eval_params_from_checkpoint(checkpoint);
    const PredictionSet predictions = predict_all(samples, params, checkpoint.config);

    ordered_json j;
    j["mode"] = predictions.mode;
    j["split"] = args.split;
    ordered_json items = ordered_json::array();
    for (const auto& [id, values] : predictions.items) {
        ordered_json item;
        item["id"] = id;
        item["values"] = values;
        items.push_back(std::move(item));
    }
    j["predictions"] = std::move(items);
    write_text_file(args.out_path, j.dump(2) + "\n");
    std::cout << "predict: wrote " << predictions.items.size() << " predictions to "
              << args.out_path.string() << "\n";
    return 0;
}

int run_ensemble(const EnsembleArgs& args) {
    if (args.checkpoints.empty()) throw ConfigError("ensemble: needs at least one checkpoint");
    std::vector<Checkpoint> checkpoints;
    for (const auto& path : args.checkpoints) checkpoints.push_back(load_checkpoint(path));
    const Checkpoint& first = checkpoints.front();
    for (const auto& c : checkpoints) {
        if (c.config.head_mode != first.config.head_mode) {
            throw ConfigError("ensemble: checkpoints mix eri and expr modes");
        }
        if (c.config.seq_len != first.config.seq_len ||
            c.config.audio_in != first.config.audio_in ||
            c.config.visual_in != first.config.visual_in) {
            throw ConfigError("ensemble: checkpoints disagree on input geometry");
        }
    }
    const Dataset dataset = dataset_for_manifest(args.manifest, first.config);
    const auto& samples = dataset.split(args.split);
    if (samples.empty()) throw DataError("ensemble: split '" + args.split + "' is empty");

    std::vector<PredictionSet> sets;
    for (const auto& c : checkpoints) {
        const model::ModelParams params = eval_params_from_checkpoint(c);
        sets.push_back(predict_all(samples, params, c.config));
    }
    const PredictionSet averaged = ensemble_average(sets);
    const EvalReport report = evaluate_predictions(averaged, samples, first.config);

    const auto& names = report.mode == "eri" ? eri_class_names() : expr_class_names();
    for (std::size_t i = 0; i < report.per_class.size(); ++i) {
        std::cout << names[i] << ": " << report.per_class[i] << "\n";
    }
    std::cout << (report.mode == "eri" ? "mean_pearson: " : "macro_f1: ") << report.mean
              << " (ensemble of " << checkpoints.size() << ")\n";
    if (args.report_path) write_text_file(*args.report_path, report_to_json(report, args.split));
    return 0;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "variant         class_loss  ema  l2   mean_pearson\n";
    for (const auto& r : rows) {
        char line[128];
        std::snprintf(line, sizeof(line), "%-15s %-11s %-4s %-4s %.6f\n", r.variant.c_str(),
                      r.class_loss ? "on" : "off", r.ema ? "on" : "off", r.l2 ? "on" : "off",
                      r.metric);
        out << line;
    }
    return out.str();
}

int run_ablate(const AblateArgs& args) {
    RunConfig base = load_run_config(args.config_path);
    if (args.seed_override) base.train.seed = *args.seed_override;
    base.train.use_class_loss = true;
    base.train.use_ema = true;
    base.train.use_l2 = true;

    struct Variant {
        const char* name;
        bool class_loss, ema, l2;
    };
    const Variant variants[] = {
        {"all_on", true, true, true},
        {"no_class_loss", false, true, true},
        {"no_ema", true, false, true},
        {"no_l2", true, true, false},
    };

    const auto config_dir = args.config_path.parent_path();
    auto run_variant = [&](const Variant& v) {
        RunConfig config = base;
        config.train.use_class_loss = v.class_loss;
        config.train.use_ema = v.ema;
        config.train.use_l2 = v.l2;
        return train_to_dir(config, config_dir, args.out_dir / v.name);
    };

    std::vector<TrainOutcome> outcomes(4);
    if (args.parallel) {
        std::vector<std::future<TrainOutcome>> futures;
        for (const auto& v : variants) {
            futures.push_back(std::async(std::launch::async, run_variant, v));
        }
        for (std::size_t i = 0; i < futures.size(); ++i) outcomes[i] = futures[i].get();
    } else {
        for (std::size_t i = 0; i < 4; ++i) outcomes[i] = run_variant(variants[i]);
    }

    std::vector<AblationRow> rows;
    ordered_json j = ordered_json::array();
    for (std::size_t i = 0; i < 4; ++i) {
        AblationRow row;
        row.variant = variants[i].name;
        row.class_loss = variants[i].class_loss;
        row.ema = variants[i].ema;
        row.l2 = variants[i].l2;
        row.metric = outcomes[i].best_metric;
        rows.push_back(row);
        ordered_json item;
        item["variant"] = row.variant;
        item["class_loss"] = row.class_loss;
        item["ema"] = row.ema;
        item["l2"] = row.l2;
        item["metric"] = row.metric;
        item["clip_events_total"] = outcomes[i].clip_events_total;
        item["seed"] = base.train.seed;
        j.push_back(std::move(item));
    }
    std::filesystem::create_directories(args.out_dir);
    write_text_file(args.out_dir / "ablation.json", j.dump(2) + "\n");
    const std::string table = ablation_table(rows);
    write_text_file(args.out_dir / "ablation.txt", table);
    std::cout << table;
    return 0;
}

int run_gradcheck(const GradcheckArgs& args) {
    if (args.dim > 16 || args.seq_len > 8) {
        throw ConfigError("gradcheck: dims are capped at dim <= 16, seq <= 8");
    }
    const auto started = std::chrono::steady_clock::now();
    const auto results = gradcheck_all(args);
    bool ok = true;
    for (const auto& r : results) {
        const bool pass = r.passed(args.threshold);
        ok = ok && pass;
        char line[192];
        if (r.skipped_nonsmooth == 0) {
            std::snprintf(line, sizeof(line), "%-22s max_rel_err=%.3e  (%zu components)  %s\n",
                          r.op.c_str(), r.max_rel_err, r.checked, pass ? "PASS" : "FAIL");
        } else {
            std::snprintf(line, sizeof(line),
                          "%-22s max_rel_err=%.3e  (%zu components, %zu at kinks skipped)  %s\n",
                          r.op.c_str(), r.max_rel_err, r.checked, r.skipped_nonsmooth,
                          pass ? "PASS" : "FAIL");
        }
        std::cout << line;
        if (!r.finite) std::cout << "  " << r.detail << "\n";
    }
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();
    std::cout << (ok ? "gradcheck: all ops passed" : "gradcheck: FAILURES above") << " ("
              << results.size() << " ops, " << elapsed << " ms)\n";
    if (!ok) {
        for (const auto& r : results) {
            if (!r.passed(args.threshold)) {
                std::cerr << "gradcheck: op '" << r.op << "' exceeded threshold\n";
            }
        }
        return static_cast<int>(ExitCode::numeric);
    }
    return 0;
}

int exit_code_for(const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        return static_cast<int>(err->code());
    }
    return static_cast<int>(ExitCode::failure);
}

}  // namespace trifuse::cmd
