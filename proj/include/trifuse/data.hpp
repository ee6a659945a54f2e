#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trifuse/matrix.hpp"

namespace trifuse {

// One manifest line. ERI entries carry exactly one audio and one visual
// feature path plus 7 raw intensity labels; expression entries carry one or
// more visual stream paths and a single class label.
struct ManifestEntry {
    std::string id;
    std::vector<std::string> feature_paths;
    std::array<double, 7> raw_labels{};
    std::size_t class_label = 0;
    std::string split;  // train | val | test
};

struct Manifest {
    std::string mode;  // eri | expr
    std::vector<ManifestEntry> entries;
};

// A sample as delivered to the model: both sequences aligned to the model's
// length, labels normalized to [0,1], class target = argmax of intensities.
struct Sample {
    std::string id;
    Matrix audio;   // T x audio_in (empty in expr mode)
    Matrix visual;  // T x visual_in
    std::array<double, 7> intensities{};
    std::size_t class_target = 0;
};

struct Dataset {
    std::string mode;
    std::vector<Sample> train, val, test;

    const std::vector<Sample>& split(const std::string& name) const;
};

// --- FEAT binary format -------------------------------------------------------
// magic "FEAT", u32 version, u32 rows, u32 cols, rows*cols float32
// little-endian row-major. Values are promoted to 64-bit on read.

void write_feature_file(const std::filesystem::path& path, const Matrix& values);
Matrix read_feature_file(const std::filesystem::path& path);

// --- ingestion helpers ----------------------------------------------------------

// Resamples a sequence onto `length` uniformly spaced time positions by
// linear interpolation. length == rows is the identity; a single input row
// is repeated.
Matrix align_to_length(const Matrix& seq, std::size_t length);

// (x - lo) / (hi - lo); raw values must lie within [lo, hi].
double normalize_label(double raw, double lo = 1.0, double hi = 100.0);
std::array<double, 7> normalize_labels(const std::array<double, 7>& raw, double lo = 1.0,
                                       double hi = 100.0);

// Index of the maximal intensity, lowest index on ties.
std::size_t derive_class_target(const std::array<double, 7>& intensities);

// --- manifest -------------------------------------------------------------------

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct LoadOptions {
    std::size_t seq_len = 32;
    std::size_t audio_in = 1024;
    std::size_t visual_in = 1536;
};

// Loads and aligns every referenced feature file, normalizes labels, fills
// splits. Feature paths are resolved relative to the manifest's directory.
Dataset load_dataset(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                     const LoadOptions& options);

// --- synthetic planted-signal generator ------------------------------------------

struct SynthOptions {
    std::size_t n = 2000;
    std::uint64_t seed = 1;
    double noise = 0.1;
    std::string mode = "eri";  // eri | expr
    std::size_t audio_dim = 64;
    std::size_t visual_dim = 96;
    std::size_t len_min = 6;
    std::size_t len_max = 12;
    double train_fraction = 0.70;
    double val_fraction = 0.15;
    std::size_t expr_classes = 8;
    std::size_t expr_streams = 2;
};

// Draws per-sample latent 7-vector intensities and emits FEAT files whose
// rows carry linear projections of latent subsets plus noise. The audio
// subset is strictly smaller than the visual one and their union covers all
// seven dimensions, so audio-only < visual-only < fused recoverability by
// construction. Writes manifest.tsv, features/, and truth.json (the latent
// vectors and mixing matrices, for oracle checks). Returns the manifest.
Manifest synth_generate(const SynthOptions& options, const std::filesystem::path& out_dir);

// Latent dimensions carried by each modality, as planted by synth_generate.
std::vector<std::size_t> synth_audio_dims();
std::vector<std::size_t> synth_visual_dims();

}  // namespace trifuse
