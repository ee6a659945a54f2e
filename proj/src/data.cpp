#include "trifuse/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "trifuse/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "FEAT and checkpoint formats are written on little-endian hosts");

namespace trifuse {

namespace {

constexpr char kFeatMagic[4] = {'F', 'E', 'A', 'T'};
constexpr std::uint32_t kFeatVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const std::filesystem::path& path, const char* what,
                       std::uint64_t offset) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) {
        throw DataError("FEAT '" + path.string() + "': truncated while reading " + what +
                        " at byte offset " + std::to_string(offset));
    }
    return v;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("manifest: bad number '" + s + "' in " + context);
    }
}

}  // namespace

const std::vector<Sample>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "' (expected train, val, or test)");
}

void write_feature_file(const std::filesystem::path& path, const Matrix& values) {
    if (values.rows() == 0 || values.cols() == 0) {
        throw DataError("FEAT '" + path.string() + "': refusing to write empty matrix");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("FEAT '" + path.string() + "': cannot open for writing");
    out.write(kFeatMagic, 4);
    write_u32(out, kFeatVersion);
    write_u32(out, static_cast<std::uint32_t>(values.rows()));
    write_u32(out, static_cast<std::uint32_t>(values.cols()));
    std::vector<float> row(values.cols());
    for (std::size_t i = 0; i < values.rows(); ++i) {
        for (std::size_t j = 0; j < values.cols(); ++j)
            row[j] = static_cast<float>(values(i, j));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw DataError("FEAT '" + path.string() + "': write failed");
}

Matrix read_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("FEAT '" + path.string() + "': cannot open");
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kFeatMagic, 4) != 0) {
        throw DataError("FEAT '" + path.string() + "': bad magic at byte offset 0");
    }
    const std::uint32_t version = read_u32(in, path, "version", 4);
    if (version != kFeatVersion) {
        throw DataError("FEAT '" + path.string() + "': unsupported version " +
                        std::to_string(version));
    }
    const std::uint32_t rows = read_u32(in, path, "rows", 8);
    const std::uint32_t cols = read_u32(in, path, "cols", 12);
    if (rows == 0 || cols == 0) {
        throw DataError("FEAT '" + path.string() + "': empty shape " + std::to_string(rows) +
                        "x" + std::to_string(cols) + " (need at least one row and column)");
    }
    Matrix values(rows, cols);
    std::vector<float> row(cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) {
            const auto offset = 16 + static_cast<std::uint64_t>(i) * cols * sizeof(float);
            throw DataError("FEAT '" + path.string() + "': truncated in row " +
                            std::to_string(i) + " near byte offset " + std::to_string(offset));
        }
        for (std::uint32_t j = 0; j < cols; ++j) {
            if (!std::isfinite(row[j])) {
                throw DataError("FEAT '" + path.string() + "': non-finite value at row " +
                                std::to_string(i) + ", col " + std::to_string(j));
            }
            values(i, j) = static_cast<double>(row[j]);
        }
    }
    return values;
}

Matrix align_to_length(const Matrix& seq, std::size_t length) {
    if (length < 1) throw ConfigError("align_to_length: length must be >= 1");
    if (seq.rows() == 0) throw DataError("align_to_length: empty sequence");
    if (seq.rows() == length) return seq;
    Matrix out(length, seq.cols());
    const std::size_t last = seq.rows() - 1;
    for (std::size_t i = 0; i < length; ++i) {
        // Endpoint-inclusive uniform positions; a single output row samples
        // the midpoint.
        const double pos = length == 1
                               ? static_cast<double>(last) / 2.0
                               : static_cast<double>(i) * static_cast<double>(last) /
                                     static_cast<double>(length - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, last);
        const double frac = pos - static_cast<double>(lo);
        for (std::size_t j = 0; j < seq.cols(); ++j) {
            out(i, j) = (1.0 - frac) * seq(lo, j) + frac * seq(hi, j);
        }
    }
    return out;
}

double normalize_label(double raw, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("normalize_label: bad range");
    if (raw < lo || raw > hi) {
        throw DataError("label " + format_double(raw) + " outside [" + format_double(lo) + ", " +
                        format_double(hi) + "]");
    }
    return (raw - lo) / (hi - lo);
}

std::array<double, 7> normalize_labels(const std::array<double, 7>& raw, double lo, double hi) {
    std::array<double, 7> out{};
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = normalize_label(raw[i], lo, hi);
    return out;
}

std::size_t derive_class_target(const std::array<double, 7>& intensities) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < intensities.size(); ++i) {
        if (intensities[i] > intensities[best]) best = i;
    }
    return best;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest '" + path.string() + "': cannot open");
    std::string header;
    if (!std::getline(in, header)) throw DataError("manifest '" + path.string() + "': empty file");
    Manifest manifest;
    if (header.rfind("#manifest v1 mode=", 0) != 0) {
        throw DataError("manifest '" + path.string() +
                        "': bad header (expected '#manifest v1 mode=<eri|expr>')");
    }
    manifest.mode = header.substr(std::string("#manifest v1 mode=").size());
    if (manifest.mode != "eri" && manifest.mode != "expr") {
        throw DataError("manifest '" + path.string() + "': unknown mode '" + manifest.mode + "'");
    }
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_on(line, '\t');
        const std::string context = path.string() + ":" + std::to_string(lineno);
        ManifestEntry entry;
        if (manifest.mode == "eri") {
            if (fields.size() != 5) {
                throw DataError("manifest " + context + ": expected 5 tab-separated fields, got " +
                                std::to_string(fields.size()));
            }
            entry.id = fields[0];
            entry.feature_paths = {fields[1], fields[2]};
            const auto labels = split_on(fields[3], ',');
            if (labels.size() != 7) {
                throw DataError("manifest " + context + ": expected 7 labels, got " +
                                std::to_string(labels.size()));
            }
            for (std::size_t i = 0; i < 7; ++i)
                entry.raw_labels[i] = parse_double(labels[i], context);
            entry.split = fields[4];
        } else {
            if (fields.size() != 4) {
                throw DataError("manifest " + context + ": expected 4 tab-separated fields, got " +
                                std::to_string(fields.size()));
            }
            entry.id = fields[0];
            entry.feature_paths = split_on(fields[1], ';');
            if (entry.feature_paths.empty() || entry.feature_paths.front().empty()) {
                throw DataError("manifest " + context + ": no feature paths");
            }
            const double cls = parse_double(fields[2], context);
            if (cls < 0 || cls != std::floor(cls)) {
                throw DataError("manifest " + context + ": bad class label '" + fields[2] + "'");
            }
            entry.class_label = static_cast<std::size_t>(cls);
            entry.split = fields[3];
        }
        if (entry.split != "train" && entry.split != "val" && entry.split != "test") {
            throw DataError("manifest " + context + ": unknown split '" + entry.split + "'");
        }
        if (!ids.insert(entry.id).second) {
            throw DataError("manifest " + context + ": duplicate sample id '" + entry.id + "'");
        }
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("manifest '" + path.string() + "': cannot open for writing");
    out << "#manifest v1 mode=" << manifest.mode << "\n";
    for (const auto& entry : manifest.entries) {
        if (manifest.mode == "eri") {
            out << entry.id << '\t' << entry.feature_paths.at(0) << '\t'
                << entry.feature_paths.at(1) << '\t';
            for (std::size_t i = 0; i < 7; ++i) {
                if (i) out << ',';
                out << format_double(entry.raw_labels[i]);
            }
            out << '\t' << entry.split << "\n";
        } else {
            out << entry.id << '\t';
            for (std::size_t i = 0; i < entry.feature_paths.size(); ++i) {
                if (i) out << ';';
                out << entry.feature_paths[i];
            }
            out << '\t' << entry.class_label << '\t' << entry.split << "\n";
        }
    }
    if (!out) throw DataError("manifest '" + path.string() + "': write failed");
}

Dataset load_dataset(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                     const LoadOptions& options) {
    Dataset dataset;
    dataset.mode = manifest.mode;
    for (const auto& entry : manifest.entries) {
        Sample sample;
        sample.id = entry.id;
        if (manifest.mode == "eri") {
            const Matrix audio = read_feature_file(manifest_dir / entry.feature_paths[0]);
            const Matrix visual = read_feature_file(manifest_dir / entry.feature_paths[1]);
            if (audio.cols() != options.audio_in) {
                throw DataError("sample '" + entry.id + "': audio width " +
                                std::to_string(audio.cols()) + " != expected " +
                                std::to_string(options.audio_in));
            }
            if (visual.cols() != options.visual_in) {
                throw DataError("sample '" + entry.id + "': visual width " +
                                std::to_string(visual.cols()) + " != expected " +
                                std::to_string(options.visual_in));
            }
            sample.audio = align_to_length(audio, options.seq_len);
            sample.visual = align_to_length(visual, options.seq_len);
            sample.intensities = normalize_labels(entry.raw_labels);
            sample.class_target = derive_class_target(sample.intensities);
        } else {
            // Expression mode: column-concatenate the aligned streams.
            std::vector<Matrix> streams;
            std::size_t total = 0;
            for (const auto& p : entry.feature_paths) {
                streams.push_back(align_to_length(read_feature_file(manifest_dir / p),
                                                  options.seq_len));
                total += streams.back().cols();
            }
            if (total != options.visual_in) {
                throw DataError("sample '" + entry.id + "': stitched width " +
                                std::to_string(total) + " != expected " +
                                std::to_string(options.visual_in));
            }
            Matrix stitched(options.seq_len, total);
            std::size_t off = 0;
            for (const auto& s : streams) {
                for (std::size_t i = 0; i < s.rows(); ++i)
                    for (std::size_t j = 0; j < s.cols(); ++j) stitched(i, off + j) = s(i, j);
                off += s.cols();
            }
            sample.visual = std::move(stitched);
            sample.class_target = entry.class_label;
        }
        if (entry.split == "train") {
            dataset.train.push_back(std::move(sample));
        } else if (entry.split == "val") {
            dataset.val.push_back(std::move(sample));
        } else {
            dataset.test.push_back(std::move(sample));
        }
    }
    return dataset;
}

std::vector<std::size_t> synth_audio_dims() { return {0, 1, 2}; }
std::vector<std::size_t> synth_visual_dims() { return {2, 3, 4, 5, 6}; }

namespace {

Matrix draw_mixing(Rng& rng, std::size_t feature_dim, std::size_t latent_dims) {
    Matrix m(latent_dims, feature_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(latent_dims));
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

Matrix planted_sequence(Rng& rng, const Matrix& mixing, const std::vector<double>& latents,
                        std::size_t t_len, double noise) {
    const std::size_t d = mixing.cols();
    Matrix base(1, d);
    for (std::size_t k = 0; k < mixing.rows(); ++k) {
        for (std::size_t j = 0; j < d; ++j) base.data()[j] += latents[k] * mixing(k, j);
    }
    Matrix seq(t_len, d);
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            seq(t, j) = base.data()[j] + noise * rng.normal();
        }
    }
    return seq;
}

std::string matrix_to_json(const Matrix& m) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (i) out << ",";
        out << "[";
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out << ",";
            out << format_double(m(i, j));
        }
        out << "]";
    }
    out << "]";
    return out.str();
}

}  // namespace

Manifest synth_generate(const SynthOptions& options, const std::filesystem::path& out_dir) {
    if (options.n < 20) throw ConfigError("synth_generate: n must be >= 20");
    if (options.noise < 0.0) throw ConfigError("synth_generate: noise must be >= 0");
    if (options.len_min < 1 || options.len_max < options.len_min) {
        throw ConfigError("synth_generate: bad sequence length range");
    }
    std::filesystem::create_directories(out_dir / "features");

    Manifest manifest;
    manifest.mode = options.mode;
    std::ostringstream truth;

    if (options.mode == "eri") {
        Rng rng(mix_seed(options.seed, 0x5e1f));
        const auto sa = synth_audio_dims();
        const auto sv = synth_visual_dims();
        const Matrix mix_a = draw_mixing(rng, options.audio_dim, sa.size());
        const Matrix mix_v = draw_mixing(rng, options.visual_dim, sv.size());

        truth << "{\n  \"mode\": \"eri\",\n";
        truth << "  \"audio_latent_dims\": [0,1,2],\n";
        truth << "  \"visual_latent_dims\": [2,3,4,5,6],\n";
        truth << "  \"audio_mixing\": " << matrix_to_json(mix_a) << ",\n";
        truth << "  \"visual_mixing\": " << matrix_to_json(mix_v) << ",\n";
        truth << "  \"latents\": [\n";

        for (std::size_t i = 0; i < options.n; ++i) {
            std::vector<double> z(7);
            for (double& v : z) v = rng.uniform();
            std::vector<double> za, zv;
            for (std::size_t k : sa) za.push_back(z[k]);
            for (std::size_t k : sv) zv.push_back(z[k]);
            const std::size_t t_a =
                options.len_min + rng.below(options.len_max - options.len_min + 1);
            const std::size_t t_v =
                options.len_min + rng.below(options.len_max - options.len_min + 1);
            const Matrix audio = planted_sequence(rng, mix_a, za, t_a, options.noise);
            const Matrix visual = planted_sequence(rng, mix_v, zv, t_v, options.noise);

            char id[32];
            std::snprintf(id, sizeof(id), "s%05zu", i);
            const std::string audio_rel = std::string("features/") + id + "_a.feat";
            const std::string visual_rel = std::string("features/") + id + "_v.feat";
            write_feature_file(out_dir / audio_rel, audio);
            write_feature_file(out_dir / visual_rel, visual);

            ManifestEntry entry;
            entry.id = id;
            entry.feature_paths = {audio_rel, visual_rel};
            for (std::size_t k = 0; k < 7; ++k) entry.raw_labels[k] = 1.0 + 99.0 * z[k];
            const double u = rng.uniform();
            entry.split = u < options.train_fraction
                              ? "train"
                              : (u < options.train_fraction + options.val_fraction ? "val"
                                                                                   : "test");
            manifest.entries.push_back(std::move(entry));

            truth << "    [";
            for (std::size_t k = 0; k < 7; ++k) {
                if (k) truth << ",";
                truth << format_double(z[k]);
            }
            truth << "]" << (i + 1 < options.n ? "," : "") << "\n";
        }
        truth << "  ]\n}\n";
    } else if (options.mode == "expr") {
        // Class-conditioned stream means plus noise; enough structure for the
        // expression pipeline to learn and be tested end to end.
        Rng rng(mix_seed(options.seed, 0xe1f2));
        const std::size_t per_stream = options.visual_dim / options.expr_streams;
        std::vector<Matrix> class_means;
        for (std::size_t c = 0; c < options.expr_classes; ++c) {
            Matrix m(1, per_stream * options.expr_streams);
            for (std::size_t j = 0; j < m.size(); ++j) m.data()[j] = rng.normal();
            class_means.push_back(std::move(m));
        }
        truth << "{\n  \"mode\": \"expr\",\n  \"classes\": " << options.expr_classes << "\n}\n";

        for (std::size_t i = 0; i < options.n; ++i) {
            const std::size_t cls = rng.below(options.expr_classes);
            const std::size_t t_len =
                options.len_min + rng.below(options.len_max - options.len_min + 1);
            char id[32];
            std::snprintf(id, sizeof(id), "s%05zu", i);
            ManifestEntry entry;
            entry.id = id;
            entry.class_label = cls;
            for (std::size_t s = 0; s < options.expr_streams; ++s) {
                Matrix seq(t_len, per_stream);
                for (std::size_t t = 0; t < t_len; ++t)
                    for (std::size_t j = 0; j < per_stream; ++j)
                        seq(t, j) = class_means[cls].data()[s * per_stream + j] +
                                    options.noise * rng.normal();
                const std::string rel =
                    std::string("features/") + id + "_s" + std::to_string(s) + ".feat";
                write_feature_file(out_dir / rel, seq);
                entry.feature_paths.push_back(rel);
            }
            const double u = rng.uniform();
            entry.split = u < options.train_fraction
                              ? "train"
                              : (u < options.train_fraction + options.val_fraction ? "val"
                                                                                   : "test");
            manifest.entries.push_back(std::move(entry));
        }
    } else {
        throw ConfigError("synth_generate: unknown mode '" + options.mode + "'");
    }

    save_manifest(out_dir / "manifest.tsv", manifest);
    std::ofstream truth_out(out_dir / "truth.json", std::ios::trunc);
    truth_out << truth.str();
    return manifest;
}

}  // namespace trifuse
