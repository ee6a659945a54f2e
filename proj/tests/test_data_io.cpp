#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>

#include "support/oracles.hpp"
#include "trifuse/data.hpp"
#include "trifuse/rng.hpp"

using namespace trifuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("trifuse_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("feature files round-trip exactly at 32-bit precision") {
    const fs::path dir = temp_dir("feat_roundtrip");
    Rng rng(31);
    Matrix m(5, 3);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    write_feature_file(dir / "a.feat", m);
    const Matrix back = read_feature_file(dir / "a.feat");
    REQUIRE(back.same_shape(m));
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(back.data()[i] == static_cast<double>(static_cast<float>(m.data()[i])));
    }
    // Second write is byte-identical.
    write_feature_file(dir / "b.feat", back);
    CHECK(slurp(dir / "a.feat") == slurp(dir / "b.feat"));
}

TEST_CASE("feature file with known bytes decodes to the hand-written matrix") {
    const fs::path dir = temp_dir("feat_fixture");
    const fs::path path = dir / "fixture.feat";
    {
        std::ofstream out(path, std::ios::binary);
        out.write("FEAT", 4);
        const std::uint32_t version = 1, rows = 3, cols = 2;
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&rows), 4);
        out.write(reinterpret_cast<const char*>(&cols), 4);
        const float values[6] = {1.5f, -2.0f, 0.25f, 4.0f, -0.5f, 8.0f};
        out.write(reinterpret_cast<const char*>(values), sizeof(values));
    }
    const Matrix m = read_feature_file(path);
    REQUIRE(m.rows() == 3);
    REQUIRE(m.cols() == 2);
    CHECK(m(0, 0) == 1.5);
    CHECK(m(0, 1) == -2.0);
    CHECK(m(1, 0) == 0.25);
    CHECK(m(1, 1) == 4.0);
    CHECK(m(2, 0) == -0.5);
    CHECK(m(2, 1) == 8.0);
}

TEST_CASE("feature reader rejects bad files with positions") {
    const fs::path dir = temp_dir("feat_errors");

    {
        std::ofstream out(dir / "empty_rows.feat", std::ios::binary);
        out.write("FEAT", 4);
        const std::uint32_t version = 1, rows = 0, cols = 3;
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&rows), 4);
        out.write(reinterpret_cast<const char*>(&cols), 4);
    }
    CHECK_THROWS_AS(read_feature_file(dir / "empty_rows.feat"), DataError);

    {
        std::ofstream out(dir / "bad_magic.feat", std::ios::binary);
        out.write("FEET", 4);
    }
    CHECK_THROWS_WITH_AS(read_feature_file(dir / "bad_magic.feat"),
                         doctest::Contains("bad magic"), DataError);

    {
        std::ofstream out(dir / "truncated.feat", std::ios::binary);
        out.write("FEAT", 4);
        const std::uint32_t version = 1, rows = 4, cols = 2;
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&rows), 4);
        out.write(reinterpret_cast<const char*>(&cols), 4);
        const float row[2] = {1.0f, 2.0f};
        out.write(reinterpret_cast<const char*>(row), sizeof(row));
    }
    CHECK_THROWS_WITH_AS(read_feature_file(dir / "truncated.feat"),
                         doctest::Contains("byte offset"), DataError);

    {
        std::ofstream out(dir / "nonfinite.feat", std::ios::binary);
        out.write("FEAT", 4);
        const std::uint32_t version = 1, rows = 1, cols = 2;
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&rows), 4);
        out.write(reinterpret_cast<const char*>(&cols), 4);
        const float row[2] = {1.0f, std::numeric_limits<float>::infinity()};
        out.write(reinterpret_cast<const char*>(row), sizeof(row));
    }
    CHECK_THROWS_WITH_AS(read_feature_file(dir / "nonfinite.feat"),
                         doctest::Contains("row 0, col 1"), DataError);
}

TEST_CASE("align_to_length identity is bitwise") {
    Rng rng(32);
    Matrix m(6, 4);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    const Matrix out = align_to_length(m, 6);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(out.data()[i] == m.data()[i]);
}

TEST_CASE("align_to_length preserves constants and repeats single rows") {
    Matrix constant(4, 3, 2.5);
    const Matrix stretched = align_to_length(constant, 9);
    for (std::size_t i = 0; i < stretched.size(); ++i) CHECK(stretched.data()[i] == 2.5);

    Matrix single(1, 3);
    single(0, 0) = 1.0;
    single(0, 1) = -2.0;
    single(0, 2) = 3.0;
    const Matrix repeated = align_to_length(single, 5);
    REQUIRE(repeated.rows() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(repeated(i, 0) == 1.0);
        CHECK(repeated(i, 1) == -2.0);
        CHECK(repeated(i, 2) == 3.0);
    }
}

TEST_CASE("align_to_length hits source rows 0, 2, 4 when resampling 5 -> 3") {
    Matrix ramp(5, 1);
    for (std::size_t t = 0; t < 5; ++t) ramp(t, 0) = static_cast<double>(t);
    const Matrix out = align_to_length(ramp, 3);
    REQUIRE(out.rows() == 3);
    CHECK(out(0, 0) == 0.0);
    CHECK(out(1, 0) == 2.0);
    CHECK(out(2, 0) == 4.0);
}

TEST_CASE("align_to_length stays inside per-column bounds") {
    Rng rng(33);
    Matrix m(7, 3);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    for (const std::size_t target : {1ul, 2ul, 5ul, 13ul}) {
        const Matrix out = align_to_length(m, target);
        for (std::size_t j = 0; j < 3; ++j) {
            double lo = m(0, j), hi = m(0, j);
            for (std::size_t i = 1; i < m.rows(); ++i) {
                lo = std::min(lo, m(i, j));
                hi = std::max(hi, m(i, j));
            }
            for (std::size_t i = 0; i < out.rows(); ++i) {
                CHECK(out(i, j) >= lo - 1e-12);
                CHECK(out(i, j) <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("label normalization endpoints and midpoint") {
    CHECK(normalize_label(1.0) == 0.0);
    CHECK(normalize_label(100.0) == 1.0);
    CHECK(normalize_label(50.5) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(normalize_label(0.5), DataError);
    CHECK_THROWS_AS(normalize_label(100.5), DataError);
}

TEST_CASE("class target is the argmax with lowest-index ties") {
    CHECK(derive_class_target({0.2, 1.0, 0.3, 0, 0, 0, 0}) == 1);
    CHECK(derive_class_target({1.0, 1.0, 0, 0, 0, 0, 0}) == 0);

    Rng rng(34);
    for (int trial = 0; trial < 100; ++trial) {
        std::array<double, 7> v{};
        for (double& x : v) x = rng.uniform();
        std::size_t expected = 0;
        for (std::size_t i = 1; i < 7; ++i)
            if (v[i] > v[expected]) expected = i;
        CHECK(derive_class_target(v) == expected);
    }
}

TEST_CASE("manifest round-trips and rejects duplicates") {
    const fs::path dir = temp_dir("manifest");
    Manifest manifest;
    manifest.mode = "eri";
    ManifestEntry e;
    e.id = "s1";
    e.feature_paths = {"a1.feat", "v1.feat"};
    e.raw_labels = {1, 2, 3, 4.5, 50.25, 99, 100};
    e.split = "train";
    manifest.entries.push_back(e);
    e.id = "s2";
    e.split = "val";
    manifest.entries.push_back(e);
    save_manifest(dir / "m.tsv", manifest);
    const Manifest back = load_manifest(dir / "m.tsv");
    CHECK(back.mode == "eri");
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].id == "s1");
    CHECK(back.entries[0].raw_labels[4] == 50.25);
    CHECK(back.entries[1].split == "val");
    // Identical ordering on every load.
    const Manifest again = load_manifest(dir / "m.tsv");
    for (std::size_t i = 0; i < 2; ++i) CHECK(again.entries[i].id == back.entries[i].id);

    manifest.entries.push_back(e);  // duplicate id s2
    save_manifest(dir / "dup.tsv", manifest);
    CHECK_THROWS_WITH_AS(load_manifest(dir / "dup.tsv"), doctest::Contains("duplicate"),
                         DataError);
}

TEST_CASE("synthetic generation is deterministic file for file") {
    const fs::path dir_a = temp_dir("synth_a");
    const fs::path dir_b = temp_dir("synth_b");
    SynthOptions options;
    options.n = 24;
    options.seed = 99;
    options.noise = 0.05;
    options.audio_dim = 12;
    options.visual_dim = 18;
    const Manifest first = synth_generate(options, dir_a);
    const Manifest second = synth_generate(options, dir_b);
    REQUIRE(first.entries.size() == 24);
    CHECK(slurp(dir_a / "manifest.tsv") == slurp(dir_b / "manifest.tsv"));
    CHECK(slurp(dir_a / "truth.json") == slurp(dir_b / "truth.json"));
    for (const auto& entry : first.entries) {
        for (const auto& rel : entry.feature_paths) {
            CHECK(slurp(dir_a / rel) == slurp(dir_b / rel));
        }
    }
    (void)second;
}

namespace {

struct ProbeData {
    Matrix pooled_audio, pooled_visual, pooled_both;
    std::vector<std::array<double, 7>> latents;
};

ProbeData pooled_features(const Manifest& manifest, const fs::path& dir) {
    ProbeData probe;
    const std::size_t n = manifest.entries.size();
    Matrix audio_rows, visual_rows;
    for (std::size_t s = 0; s < n; ++s) {
        const auto& entry = manifest.entries[s];
        const Matrix audio = read_feature_file(dir / entry.feature_paths[0]);
        const Matrix visual = read_feature_file(dir / entry.feature_paths[1]);
        if (s == 0) {
            probe.pooled_audio = Matrix(n, audio.cols() + 1);
            probe.pooled_visual = Matrix(n, visual.cols() + 1);
            probe.pooled_both = Matrix(n, audio.cols() + visual.cols() + 1);
        }
        // Mean over time plus a constant column for the intercept.
        for (std::size_t j = 0; j < audio.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < audio.rows(); ++t) acc += audio(t, j);
            probe.pooled_audio(s, j) = acc / static_cast<double>(audio.rows());
            probe.pooled_both(s, j) = probe.pooled_audio(s, j);
        }
        for (std::size_t j = 0; j < visual.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < visual.rows(); ++t) acc += visual(t, j);
            probe.pooled_visual(s, j) = acc / static_cast<double>(visual.rows());
            probe.pooled_both(s, audio.cols() + j) = probe.pooled_visual(s, j);
        }
        probe.pooled_audio(s, audio.cols()) = 1.0;
        probe.pooled_visual(s, visual.cols()) = 1.0;
        probe.pooled_both(s, audio.cols() + visual.cols()) = 1.0;
        probe.latents.push_back(normalize_labels(entry.raw_labels));
    }
    return probe;
}

double probe_mean_r(const Matrix& features, const std::vector<std::array<double, 7>>& latents) {
    double total = 0.0;
    for (std::size_t k = 0; k < 7; ++k) {
        std::vector<double> y;
        for (const auto& z : latents) y.push_back(z[k]);
        const auto weights = oracles::least_squares(features, y);
        std::vector<double> fitted(features.rows(), 0.0);
        for (std::size_t i = 0; i < features.rows(); ++i)
            for (std::size_t j = 0; j < features.cols(); ++j)
                fitted[i] += features(i, j) * weights[j];
        total += oracles::naive_pearson(fitted, y);
    }
    return total / 7.0;
}

}  // namespace

TEST_CASE("noise-free synthetic data admits an exact linear read-out") {
    const fs::path dir = temp_dir("synth_probe");
    SynthOptions options;
    options.n = 60;
    options.seed = 5;
    options.noise = 0.0;
    options.audio_dim = 10;
    options.visual_dim = 14;
    const Manifest manifest = synth_generate(options, dir);
    const ProbeData probe = pooled_features(manifest, dir);

    // Fused features recover every latent dimension.
    const double fused_r = probe_mean_r(probe.pooled_both, probe.latents);
    CHECK(fused_r > 0.9999);

    // Residuals of the latent fit stay tiny (32-bit storage rounding only).
    for (std::size_t k = 0; k < 7; ++k) {
        std::vector<double> y;
        for (const auto& z : probe.latents) y.push_back(z[k]);
        const auto weights = oracles::least_squares(probe.pooled_both, y);
        for (std::size_t i = 0; i < probe.pooled_both.rows(); ++i) {
            double fitted = 0.0;
            for (std::size_t j = 0; j < probe.pooled_both.cols(); ++j)
                fitted += probe.pooled_both(i, j) * weights[j];
            CHECK(std::fabs(fitted - y[i]) < 1e-6);
        }
    }

    // The audio probe sees fewer latent dimensions than the visual probe.
    const double audio_r = probe_mean_r(probe.pooled_audio, probe.latents);
    const double visual_r = probe_mean_r(probe.pooled_visual, probe.latents);
    CHECK(audio_r < visual_r);
    CHECK(visual_r < fused_r + 1e-9);
}

TEST_CASE("loaded datasets deliver aligned, normalized, argmax-consistent samples") {
    const fs::path dir = temp_dir("synth_load");
    SynthOptions options;
    options.n = 30;
    options.seed = 17;
    options.audio_dim = 8;
    options.visual_dim = 12;
    const Manifest manifest = synth_generate(options, dir);

    LoadOptions load;
    load.seq_len = 8;
    load.audio_in = 8;
    load.visual_in = 12;
    const Dataset dataset = load_dataset(manifest, dir, load);
    CHECK(dataset.train.size() + dataset.val.size() + dataset.test.size() == 30);
    for (const auto* split : {&dataset.train, &dataset.val, &dataset.test}) {
        for (const auto& sample : *split) {
            CHECK(sample.audio.rows() == 8);
            CHECK(sample.visual.rows() == 8);
            for (double v : sample.intensities) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            CHECK(sample.class_target == derive_class_target(sample.intensities));
        }
    }
}

TEST_CASE("expression-mode generation loads as stitched visual streams") {
    const fs::path dir = temp_dir("synth_expr");
    SynthOptions options;
    options.n = 25;
    options.seed = 71;
    options.mode = "expr";
    options.visual_dim = 16;
    options.expr_streams = 2;
    options.expr_classes = 4;
    const Manifest manifest = synth_generate(options, dir);
    CHECK(manifest.mode == "expr");
    REQUIRE(manifest.entries[0].feature_paths.size() == 2);

    LoadOptions load;
    load.seq_len = 6;
    load.visual_in = 16;
    const Dataset dataset = load_dataset(manifest, dir, load);
    const std::size_t total = dataset.train.size() + dataset.val.size() + dataset.test.size();
    CHECK(total == 25);
    for (const auto& sample : dataset.train) {
        CHECK(sample.visual.rows() == 6);
        CHECK(sample.visual.cols() == 16);
        CHECK(sample.class_target < 4);
    }
}
