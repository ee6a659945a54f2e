#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "trifuse/commands.hpp"
#include "trifuse/runconfig.hpp"

using namespace trifuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("trifuse_cmd_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// Shared desk-scale setup: a generated dataset and a matching run config.
struct Workbench {
    fs::path dir;
    fs::path config_path;
    RunConfig config;
};

Workbench make_workbench(const std::string& name, std::size_t n, std::uint64_t seed) {
    Workbench bench;
    bench.dir = temp_dir(name);
    SynthOptions synth;
    synth.n = n;
    synth.seed = seed;
    synth.noise = 0.1;
    synth.audio_dim = 8;
    synth.visual_dim = 12;
    synth_generate(synth, bench.dir / "data");

    bench.config.model.embed_dim = 8;
    bench.config.model.audio_in = 8;
    bench.config.model.visual_in = 12;
    bench.config.model.heads_modality = 2;
    bench.config.model.heads_interaction = 4;
    bench.config.model.seq_len = 6;
    bench.config.model.proj_dim = 8;
    bench.config.model.ff_hidden = 16;
    bench.config.model.dropout_modality = 0.05;
    bench.config.model.dropout_interaction = 0.05;
    bench.config.train.lr = 1e-3;
    bench.config.train.batch_size = 16;
    bench.config.train.max_epochs = 5;
    bench.config.train.patience = 15;
    bench.config.train.seed = 11;
    bench.config.manifest = "data/manifest.tsv";
    bench.config_path = bench.dir / "run.ini";
    save_run_config(bench.config_path, bench.config);
    return bench;
}

}  // namespace

TEST_CASE("run configs round-trip to identical documents") {
    RunConfig config;
    config.model.embed_dim = 32;
    config.train.lr = 0.00025;
    config.train.use_ema = false;
    config.manifest = "some/dir/manifest.tsv";
    const std::string text = emit_run_config(config);
    const RunConfig parsed = parse_run_config(text);
    CHECK(emit_run_config(parsed) == text);
    CHECK(parsed.model.embed_dim == 32);
    CHECK(parsed.train.lr == 0.00025);
    CHECK_FALSE(parsed.train.use_ema);
    CHECK(parsed.manifest == "some/dir/manifest.tsv");
}

TEST_CASE("run configs reject unknown keys and sections") {
    CHECK_THROWS_WITH_AS(parse_run_config("[model]\nwidth = 3\n"),
                         doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[optimizer]\nlr = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\nlr = fast\n"), ConfigError);
}

TEST_CASE("defaults match the documented recipe") {
    const RunConfig config = parse_run_config("[model]\n[train]\n");
    CHECK(config.model.embed_dim == 256);
    CHECK(config.model.audio_in == 1024);
    CHECK(config.model.visual_in == 1536);
    CHECK(config.model.heads_modality == 2);
    CHECK(config.model.heads_interaction == 8);
    CHECK(config.model.dropout_modality == 0.5);
    CHECK(config.model.dropout_interaction == 0.1);
    CHECK(config.train.lr == 1e-4);
    CHECK(config.train.batch_size == 256);
    CHECK(config.train.max_epochs == 100);
    CHECK(config.train.patience == 15);
    CHECK(config.train.ema_decay == 0.99);
    CHECK(config.train.clip_max_norm == 0.1);
    CHECK(config.train.clip_norm_type == 2);
    CHECK(config.train.loss_weights.alpha == 1.0);
    CHECK(config.train.loss_weights.beta == 0.01);
}

TEST_CASE("training writes its artifacts and repeats bit for bit") {
    const Workbench bench = make_workbench("train_determinism", 60, 31);

    cmd::TrainArgs args;
    args.config_path = bench.config_path;
    args.out_dir = bench.dir / "out1";
    CHECK(cmd::run_train(args) == 0);
    CHECK(fs::exists(args.out_dir / "checkpoint.fusn"));
    CHECK(fs::exists(args.out_dir / "history.jsonl"));
    CHECK(fs::exists(args.out_dir / "metrics.json"));
    CHECK(fs::exists(args.out_dir / "config.ini"));

    args.out_dir = bench.dir / "out2";
    CHECK(cmd::run_train(args) == 0);
    CHECK(slurp(bench.dir / "out1/history.jsonl") == slurp(bench.dir / "out2/history.jsonl"));
    CHECK(slurp(bench.dir / "out1/checkpoint.fusn") ==
          slurp(bench.dir / "out2/checkpoint.fusn"));

    // The echoed config is canonical: it parses and re-emits identically.
    const std::string echoed = slurp(bench.dir / "out1/config.ini");
    CHECK(emit_run_config(parse_run_config(echoed)) == echoed);
}

TEST_CASE("training on a missing manifest names the path and exits nonzero") {
    const fs::path dir = temp_dir("missing_manifest");
    RunConfig config;
    config.model.embed_dim = 8;
    config.model.heads_interaction = 4;
    config.manifest = "nowhere/manifest.tsv";
    save_run_config(dir / "run.ini", config);
    cmd::TrainArgs args;
    args.config_path = dir / "run.ini";
    args.out_dir = dir / "out";
    try {
        cmd::run_train(args);
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("nowhere/manifest.tsv") != std::string::npos);
        CHECK(cmd::exit_code_for(e) == static_cast<int>(ExitCode::data));
    }
}

TEST_CASE("eval reports round-trip and an ensemble of one matches eval") {
    const Workbench bench = make_workbench("eval_roundtrip", 60, 32);
    cmd::TrainArgs train_args;
    train_args.config_path = bench.config_path;
    train_args.out_dir = bench.dir / "out";
    REQUIRE(cmd::run_train(train_args) == 0);

    cmd::EvalArgs eval_args;
    eval_args.checkpoint = bench.dir / "out/checkpoint.fusn";
    eval_args.manifest = bench.dir / "data/manifest.tsv";
    eval_args.split = "val";
    eval_args.report_path = bench.dir / "report.json";
    REQUIRE(cmd::run_eval(eval_args) == 0);

    const std::string report_text = slurp(bench.dir / "report.json");
    const EvalReport parsed = cmd::report_from_json(report_text);
    CHECK(parsed.per_class.size() == 7);
    CHECK(parsed.mode == "eri");
    // Parse-back-and-serialize stability.
    CHECK(cmd::report_to_json(parsed, "val") == report_text);

    cmd::EnsembleArgs ensemble_args;
    ensemble_args.checkpoints = {eval_args.checkpoint};
    ensemble_args.manifest = eval_args.manifest;
    ensemble_args.split = "val";
    ensemble_args.report_path = bench.dir / "ensemble_report.json";
    REQUIRE(cmd::run_ensemble(ensemble_args) == 0);
    const EvalReport ensembled = cmd::report_from_json(slurp(bench.dir / "ensemble_report.json"));
    CHECK(ensembled.mean == parsed.mean);
    for (std::size_t j = 0; j < 7; ++j) CHECK(ensembled.per_class[j] == parsed.per_class[j]);

    // Averaging a model with itself changes nothing either.
    ensemble_args.checkpoints = {eval_args.checkpoint, eval_args.checkpoint};
    ensemble_args.report_path = bench.dir / "ensemble_report2.json";
    REQUIRE(cmd::run_ensemble(ensemble_args) == 0);
    const EvalReport doubled = cmd::report_from_json(slurp(bench.dir / "ensemble_report2.json"));
    CHECK(doubled.mean == doctest::Approx(parsed.mean).epsilon(1e-12));
}

TEST_CASE("eval rejects empty splits and mode mismatches") {
    const Workbench bench = make_workbench("eval_errors", 60, 33);
    cmd::TrainArgs train_args;
    train_args.config_path = bench.config_path;
    train_args.out_dir = bench.dir / "out";
    REQUIRE(cmd::run_train(train_args) == 0);

    // A manifest whose entries all live in train: val evaluation must fail.
    Manifest manifest = load_manifest(bench.dir / "data/manifest.tsv");
    for (auto& entry : manifest.entries) entry.split = "train";
    save_manifest(bench.dir / "data/all_train.tsv", manifest);
    cmd::EvalArgs eval_args;
    eval_args.checkpoint = bench.dir / "out/checkpoint.fusn";
    eval_args.manifest = bench.dir / "data/all_train.tsv";
    eval_args.split = "val";
    CHECK_THROWS_AS(cmd::run_eval(eval_args), DataError);

    manifest.mode = "expr";
    for (auto& entry : manifest.entries) {
        entry.feature_paths = {entry.feature_paths[1]};
        entry.class_label = 0;
    }
    save_manifest(bench.dir / "data/expr.tsv", manifest);
    eval_args.manifest = bench.dir / "data/expr.tsv";
    CHECK_THROWS_WITH_AS(cmd::run_eval(eval_args), doctest::Contains("mode mismatch"),
                         DataError);
}

TEST_CASE("predict writes one record per sample in manifest order") {
    const Workbench bench = make_workbench("predict", 60, 34);
    cmd::TrainArgs train_args;
    train_args.config_path = bench.config_path;
    train_args.out_dir = bench.dir / "out";
    REQUIRE(cmd::run_train(train_args) == 0);

    cmd::PredictArgs predict_args;
    predict_args.checkpoint = bench.dir / "out/checkpoint.fusn";
    predict_args.manifest = bench.dir / "data/manifest.tsv";
    predict_args.split = "test";
    predict_args.out_path = bench.dir / "predictions.json";
    REQUIRE(cmd::run_predict(predict_args) == 0);
    const std::string text = slurp(bench.dir / "predictions.json");
    CHECK(text.find("\"mode\": \"eri\"") != std::string::npos);
    CHECK(text.find("\"values\"") != std::string::npos);
}

TEST_CASE("gradcheck passes clean and fails the corrupted-op hook") {
    cmd::GradcheckArgs args;
    args.dim = 4;
    args.seq_len = 3;
    args.heads = 2;
    CHECK(cmd::run_gradcheck(args) == 0);

    // Every differentiable op appears exactly once in the report.
    const auto results = cmd::gradcheck_all(args);
    std::set<std::string> names;
    for (const auto& r : results) CHECK(names.insert(r.op).second);
    for (const char* required :
         {"matmul", "softmax_rows", "layer_norm", "conv1d", "multi_head_attention",
          "encoder_block", "eri_forward_loss", "expr_forward_loss", "dropout", "mse",
          "cross_entropy", "focal"}) {
        CHECK(names.count(required) == 1);
    }

    args.corrupt_op = "softmax_rows";
    CHECK(cmd::run_gradcheck(args) == static_cast<int>(ExitCode::numeric));

    args.corrupt_op.clear();
    args.dim = 32;
    CHECK_THROWS_AS(cmd::run_gradcheck(args), ConfigError);
}

TEST_CASE("ablation emits four rows matching independent runs to 1e-12") {
    const Workbench bench = make_workbench("ablate", 60, 35);

    cmd::AblateArgs ablate_args;
    ablate_args.config_path = bench.config_path;
    ablate_args.out_dir = bench.dir / "ablation";
    REQUIRE(cmd::run_ablate(ablate_args) == 0);

    const std::string table = slurp(bench.dir / "ablation/ablation.txt");
    CHECK(table.find("all_on") != std::string::npos);
    CHECK(table.find("no_class_loss") != std::string::npos);
    CHECK(table.find("no_ema") != std::string::npos);
    CHECK(table.find("no_l2") != std::string::npos);

    // Cross-check one toggle against a fresh run with the same seed.
    RunConfig no_ema = bench.config;
    no_ema.train.use_ema = false;
    const cmd::TrainOutcome independent =
        cmd::train_to_dir(no_ema, bench.dir, bench.dir / "independent_no_ema");
    const std::string ablation_json = slurp(bench.dir / "ablation/ablation.json");
    const auto rows = nlohmann::json::parse(ablation_json);
    REQUIRE(rows.size() == 4);
    bool found = false;
    for (const auto& row : rows) {
        if (row.at("variant") == "no_ema") {
            found = true;
            CHECK(std::fabs(row.at("metric").get<double>() - independent.best_metric) < 1e-12);
        }
        CHECK(row.at("seed").get<std::uint64_t>() == bench.config.train.seed);
    }
    CHECK(found);
}
