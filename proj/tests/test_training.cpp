#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "trifuse/data.hpp"
#include "trifuse/train.hpp"

using namespace trifuse;
namespace fs = std::filesystem;

namespace {

ModelConfig desk_config() {
    ModelConfig config;
    config.embed_dim = 8;
    config.audio_in = 8;
    config.visual_in = 12;
    config.heads_modality = 2;
    config.heads_interaction = 4;
    config.seq_len = 6;
    config.proj_dim = 8;
    config.ff_hidden = 16;
    config.dropout_modality = 0.0;
    config.dropout_interaction = 0.0;
    return config;
}

model::ModelParams scalar_param(double value) {
    ModelConfig config;  // unused; build a 1-tensor param set by hand
    (void)config;
    model::ModelParams params;
    params.items.emplace_back("w", ad::leaf(Matrix(1, 1, value), "w"));
    return params;
}

Dataset tiny_synth_dataset(std::uint64_t seed, std::size_t n, double noise,
                           const ModelConfig& config) {
    const fs::path dir =
        fs::temp_directory_path() / ("trifuse_test_train_" + std::to_string(seed));
    fs::remove_all(dir);
    SynthOptions options;
    options.n = n;
    options.seed = seed;
    options.noise = noise;
    options.audio_dim = config.audio_in;
    options.visual_dim = config.visual_in;
    const Manifest manifest = synth_generate(options, dir);
    LoadOptions load;
    load.seq_len = config.seq_len;
    load.audio_in = config.audio_in;
    load.visual_in = config.visual_in;
    return load_dataset(manifest, dir, load);
}

}  // namespace

TEST_CASE("adam leaves parameters alone on zero gradients") {
    model::ModelParams params = scalar_param(0.7);
    AdamState state = AdamState::init(params);
    TrainConfig config;
    config.use_l2 = false;
    params.items[0].second->grad().fill(0.0);
    adam_step(params, state, config);
    CHECK(params.items[0].second->value(0, 0) == 0.7);
}

TEST_CASE("adam first step on a unit gradient moves by almost exactly lr") {
    model::ModelParams params = scalar_param(0.0);
    AdamState state = AdamState::init(params);
    TrainConfig config;
    config.lr = 1e-4;
    config.use_l2 = false;
    params.items[0].second->grad().fill(1.0);
    adam_step(params, state, config);
    // Bias correction makes m_hat = 1, v_hat = 1, so the step is lr/(1+eps).
    const double expected = -1e-4 / (1.0 + 1e-8);
    CHECK(params.items[0].second->value(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("disabling the penalty gives textbook adam on the same stream") {
    model::ModelParams with = scalar_param(0.5);
    model::ModelParams without = scalar_param(0.5);
    AdamState state_with = AdamState::init(with);
    AdamState state_without = AdamState::init(without);
    TrainConfig penalized;
    penalized.weight_decay = 0.0;  // zero coefficient: same stream either way
    TrainConfig plain;
    plain.use_l2 = false;
    Rng rng(61);
    for (int step = 0; step < 25; ++step) {
        const double g = rng.normal();
        with.items[0].second->zero_grad();
        without.items[0].second->zero_grad();
        with.items[0].second->grad().fill(g);
        without.items[0].second->grad().fill(g);
        adam_step(with, state_with, penalized);
        adam_step(without, state_without, plain);
        CHECK(std::fabs(with.items[0].second->value(0, 0) -
                        without.items[0].second->value(0, 0)) < 1e-15);
    }
}

TEST_CASE("adam rejects non-finite gradients with the tensor name") {
    model::ModelParams params = scalar_param(0.0);
    AdamState state = AdamState::init(params);
    params.items[0].second->grad().fill(std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_WITH_AS(adam_step(params, state, TrainConfig{}), doctest::Contains("'w'"),
                         NumericError);
}

TEST_CASE("gradient clipping scales exactly at the hand-computed ratio") {
    Matrix g1(1, 1, 0.3), g2(1, 1, 0.4);
    const bool clipped = clip_gradients({&g1, &g2}, 0.1, 2);
    CHECK(clipped);
    CHECK(g1(0, 0) == doctest::Approx(0.06).epsilon(1e-14));
    CHECK(g2(0, 0) == doctest::Approx(0.08).epsilon(1e-14));
}

TEST_CASE("gradient clipping leaves small gradients bitwise untouched") {
    Matrix g(2, 2);
    g(0, 0) = 0.03;
    g(1, 1) = -0.04;  // norm 0.05
    const Matrix before = g;
    CHECK_FALSE(clip_gradients({&g}, 0.1, 2));
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == before.data()[i]);
}

TEST_CASE("post-clip norm never exceeds the cap") {
    Rng rng(62);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix a(3, 4), b(2, 2);
        for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = 3.0 * rng.normal();
        for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] = 3.0 * rng.normal();
        clip_gradients({&a, &b}, 0.1, 2);
        CHECK(global_norm({&a, &b}) <= 0.1 + 1e-12);
    }
}

TEST_CASE("clipping supports only the euclidean norm") {
    Matrix g(1, 1, 1.0);
    CHECK_THROWS_AS(clip_gradients({&g}, 0.1, 1), ConfigError);
}

TEST_CASE("ema update arithmetic and closed-form convergence") {
    model::ModelParams params = scalar_param(1.0);
    std::vector<Matrix> ema = {Matrix(1, 1, 0.0)};
    ema_update(ema, params, 0.99);
    CHECK(ema[0](0, 0) == doctest::Approx(0.01).epsilon(1e-15));

    // Constant parameter: |ema - c| decays exactly geometrically.
    ema[0].fill(0.0);
    const double c = 1.0;
    double expected_gap = 1.0;
    for (int k = 1; k <= 100; ++k) {
        ema_update(ema, params, 0.99);
        expected_gap *= 0.99;
        CHECK(std::fabs((c - ema[0](0, 0)) - expected_gap) < 1e-12);
    }

    // decay 0 tracks the raw parameters immediately.
    std::vector<Matrix> instant = {Matrix(1, 1, 0.4)};
    ema_update(instant, params, 0.0);
    CHECK(instant[0](0, 0) == 1.0);
}

TEST_CASE("early stopping with patience 1 and a flat metric stops after 2 evaluations") {
    const ModelConfig config = desk_config();
    const Dataset dataset = tiny_synth_dataset(63, 40, 0.1, config);
    TrainConfig train_config;
    train_config.lr = 1e-12;  // effectively frozen: the metric cannot improve
    train_config.batch_size = 16;
    train_config.max_epochs = 50;
    train_config.patience = 1;
    train_config.seed = 7;
    train_config.use_ema = false;
    const TrainResult result = train(dataset, config, train_config);
    CHECK(result.history.size() == 2);
    CHECK(result.best_epoch == 1);
}

TEST_CASE("training twice with one seed reproduces the history bit for bit") {
    const ModelConfig config = desk_config();
    const Dataset dataset = tiny_synth_dataset(64, 48, 0.1, config);
    TrainConfig train_config;
    train_config.lr = 1e-3;
    train_config.batch_size = 16;
    train_config.max_epochs = 4;
    train_config.seed = 99;
    const TrainResult a = train(dataset, config, train_config);
    const TrainResult b = train(dataset, config, train_config);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        CHECK(a.history[e].loss_total == b.history[e].loss_total);
        CHECK(a.history[e].val_metric == b.history[e].val_metric);
        for (std::size_t j = 0; j < a.history[e].val_per_class.size(); ++j)
            CHECK(a.history[e].val_per_class[j] == b.history[e].val_per_class[j]);
    }
    REQUIRE(a.best.params.size() == b.best.params.size());
    for (std::size_t i = 0; i < a.best.params.size(); ++i) {
        const Matrix& ma = a.best.params[i].second;
        const Matrix& mb = b.best.params[i].second;
        for (std::size_t j = 0; j < ma.size(); ++j) CHECK(ma.data()[j] == mb.data()[j]);
    }
}

TEST_CASE("dropped class loss means the objective is alpha * regression exactly") {
    const ModelConfig config = desk_config();
    const Dataset dataset = tiny_synth_dataset(65, 40, 0.1, config);
    TrainConfig train_config;
    train_config.lr = 1e-3;
    train_config.batch_size = 20;
    train_config.max_epochs = 2;
    train_config.seed = 5;
    train_config.use_class_loss = false;
    train_config.loss_weights.alpha = 1.0;
    const TrainResult result = train(dataset, config, train_config);
    for (const auto& record : result.history) {
        CHECK(record.loss_total == record.loss_reg);
        CHECK(record.loss_class > 0.0);  // still observed, never optimized
    }
}

TEST_CASE("best checkpoint reproduces the logged validation metric") {
    const ModelConfig config = desk_config();
    const Dataset dataset = tiny_synth_dataset(66, 60, 0.1, config);
    TrainConfig train_config;
    train_config.lr = 1e-3;
    train_config.batch_size = 16;
    train_config.max_epochs = 6;
    train_config.seed = 21;
    const TrainResult result = train(dataset, config, train_config);
    const model::ModelParams params = eval_params_from_checkpoint(result.best);
    const EvalReport report = evaluate(dataset.val, params, config);
    CHECK(std::fabs(report.mean - result.best_metric) < 1e-12);
}

TEST_CASE("a short run on planted signal already beats chance") {
    const ModelConfig config = desk_config();
    const Dataset dataset = tiny_synth_dataset(67, 160, 0.05, config);
    TrainConfig train_config;
    train_config.lr = 2e-3;
    train_config.batch_size = 32;
    train_config.max_epochs = 12;
    train_config.patience = 15;
    train_config.seed = 3;
    const TrainResult result = train(dataset, config, train_config);
    CHECK(result.best_metric > 0.5);
}

TEST_CASE("expression mode trains end to end on class-conditioned streams") {
    const fs::path dir = fs::temp_directory_path() / "trifuse_test_train_expr";
    fs::remove_all(dir);
    SynthOptions options;
    options.n = 80;
    options.seed = 68;
    options.mode = "expr";
    options.noise = 0.3;
    options.visual_dim = 12;
    options.expr_streams = 2;
    options.expr_classes = 4;
    const Manifest manifest = synth_generate(options, dir);

    ModelConfig config;
    config.head_mode = HeadMode::expr;
    config.branches = BranchSet::visual;
    config.embed_dim = 8;
    config.visual_in = 12;
    config.heads_modality = 2;
    config.heads_interaction = 4;
    config.seq_len = 6;
    config.proj_dim = 8;
    config.ff_hidden = 16;
    config.dropout_modality = 0.0;
    config.dropout_interaction = 0.0;
    config.expr_classes = 4;

    LoadOptions load;
    load.seq_len = config.seq_len;
    load.visual_in = config.visual_in;
    const Dataset dataset = load_dataset(manifest, dir, load);

    TrainConfig train_config;
    train_config.lr = 2e-3;
    train_config.batch_size = 16;
    train_config.max_epochs = 15;
    train_config.seed = 8;
    train_config.focal = {1.0, 2.0};
    const TrainResult result = train(dataset, config, train_config);
    // Four balanced classes: chance macro F1 sits near 0.25.
    CHECK(result.best_metric > 0.5);
}
