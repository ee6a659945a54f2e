#include "trifuse/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace trifuse {

namespace {

constexpr char kMagic[4] = {'F', 'U', 'S', 'N'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const std::filesystem::path& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw DataError("checkpoint '" + path.string() + "': truncated");
    return v;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_blob(std::ostream& out, const std::string& name, const Matrix& m) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(m.rows()));
    write_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
}

}  // namespace

std::string encode_model_config(const ModelConfig& c, bool eval_uses_ema) {
    std::ostringstream out;
    out << "mode = " << to_string(c.head_mode) << "\n";
    out << "branches = " << to_string(c.branches) << "\n";
    out << "embed_dim = " << c.embed_dim << "\n";
    out << "audio_in = " << c.audio_in << "\n";
    out << "visual_in = " << c.visual_in << "\n";
    out << "heads_modality = " << c.heads_modality << "\n";
    out << "heads_interaction = " << c.heads_interaction << "\n";
    out << "depth_modality = " << c.depth_modality << "\n";
    out << "depth_interaction = " << c.depth_interaction << "\n";
    out << "dropout_modality = " << format_double(c.dropout_modality) << "\n";
    out << "dropout_interaction = " << format_double(c.dropout_interaction) << "\n";
    out << "seq_len = " << c.seq_len << "\n";
    out << "proj_dim = " << c.proj_dim << "\n";
    out << "ff_hidden = " << c.ff_hidden << "\n";
    out << "embed_width = " << c.embed_width << "\n";
    out << "expr_classes = " << c.expr_classes << "\n";
    out << "eval_weights = " << (eval_uses_ema ? "ema" : "raw") << "\n";
    return out.str();
}

std::pair<ModelConfig, bool> decode_model_config(const std::string& text) {
    ModelConfig c;
    bool eval_uses_ema = true;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) {
            throw DataError("checkpoint config: bad line '" + line + "'");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 3);
        try {
            if (key == "mode") c.head_mode = head_mode_from_string(value);
            else if (key == "branches") c.branches = branch_set_from_string(value);
            else if (key == "embed_dim") c.embed_dim = std::stoul(value);
            else if (key == "audio_in") c.audio_in = std::stoul(value);
            else if (key == "visual_in") c.visual_in = std::stoul(value);
            else if (key == "heads_modality") c.heads_modality = std::stoul(value);
            else if (key == "heads_interaction") c.heads_interaction = std::stoul(value);
            else if (key == "depth_modality") c.depth_modality = std::stoul(value);
            else if (key == "depth_interaction") c.depth_interaction = std::stoul(value);
            else if (key == "dropout_modality") c.dropout_modality = std::stod(value);
            else if (key == "dropout_interaction") c.dropout_interaction = std::stod(value);
            else if (key == "seq_len") c.seq_len = std::stoul(value);
            else if (key == "proj_dim") c.proj_dim = std::stoul(value);
            else if (key == "ff_hidden") c.ff_hidden = std::stoul(value);
            else if (key == "embed_width") c.embed_width = std::stoul(value);
            else if (key == "expr_classes") c.expr_classes = std::stoul(value);
            else if (key == "eval_weights") eval_uses_ema = (value == "ema");
            else throw DataError("checkpoint config: unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw DataError("checkpoint config: bad value for '" + key + "'");
        }
    }
    return {c, eval_uses_ema};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint '" + path.string() + "': cannot open for writing");
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    const std::string config_text = checkpoint.config_text.empty()
                                        ? encode_model_config(checkpoint.config,
                                                              checkpoint.eval_uses_ema)
                                        : checkpoint.config_text;
    write_u32(out, static_cast<std::uint32_t>(config_text.size()));
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    write_u32(out,
              static_cast<std::uint32_t>(checkpoint.params.size() + checkpoint.ema.size()));
    for (const auto& [name, m] : checkpoint.params) write_blob(out, name, m);
    for (const auto& [name, m] : checkpoint.ema) write_blob(out, "ema." + name, m);
    if (!out) throw DataError("checkpoint '" + path.string() + "': write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint '" + path.string() + "': cannot open");
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("checkpoint '" + path.string() + "': bad magic");
    }
    const std::uint32_t version = read_u32(in, path);
    if (version != kVersion) {
        throw DataError("checkpoint '" + path.string() + "': unsupported version " +
                        std::to_string(version));
    }
    Checkpoint checkpoint;
    const std::uint32_t config_len = read_u32(in, path);
    checkpoint.config_text.resize(config_len);
    in.read(checkpoint.config_text.data(), config_len);
    if (!in) throw DataError("checkpoint '" + path.string() + "': truncated config");
    auto [config, uses_ema] = decode_model_config(checkpoint.config_text);
    checkpoint.config = config;
    checkpoint.eval_uses_ema = uses_ema;

    const std::uint32_t count = read_u32(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rows = read_u32(in, path);
        const std::uint32_t cols = read_u32(in, path);
        Matrix m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!in) {
            throw DataError("checkpoint '" + path.string() + "': truncated in blob '" + name +
                            "'");
        }
        if (name.rfind("ema.", 0) == 0) {
            checkpoint.ema.emplace_back(name.substr(4), std::move(m));
        } else {
            checkpoint.params.emplace_back(std::move(name), std::move(m));
        }
    }
    return checkpoint;
}

Checkpoint make_checkpoint(const ModelConfig& config, bool eval_uses_ema,
                           const model::ModelParams& params, const std::vector<Matrix>& ema) {
    if (ema.size() != params.items.size()) {
        throw ConfigError("checkpoint: smoothed weight count " + std::to_string(ema.size()) +
                          " != parameter count " + std::to_string(params.items.size()));
    }
    Checkpoint checkpoint;
    checkpoint.config = config;
    checkpoint.eval_uses_ema = eval_uses_ema;
    for (std::size_t i = 0; i < params.items.size(); ++i) {
        checkpoint.params.emplace_back(params.items[i].first, params.items[i].second->value);
        checkpoint.ema.emplace_back(params.items[i].first, ema[i]);
    }
    return checkpoint;
}

namespace {

model::ModelParams params_from_blobs(const Checkpoint& checkpoint,
                                     const std::vector<std::pair<std::string, Matrix>>& blobs) {
    std::vector<Matrix> values;
    values.reserve(blobs.size());
    for (const auto& [name, m] : blobs) values.push_back(m);
    model::ModelParams params = model::ModelParams::from_values(checkpoint.config, values);
    for (std::size_t i = 0; i < params.items.size(); ++i) {
        if (params.items[i].first != blobs[i].first) {
            throw DataError("checkpoint: parameter '" + blobs[i].first + "' where '" +
                            params.items[i].first + "' was expected");
        }
    }
    return params;
}

}  // namespace

model::ModelParams params_from_checkpoint(const Checkpoint& checkpoint) {
    return params_from_blobs(checkpoint, checkpoint.params);
}

model::ModelParams eval_params_from_checkpoint(const Checkpoint& checkpoint) {
    return params_from_blobs(checkpoint,
                             checkpoint.eval_uses_ema ? checkpoint.ema : checkpoint.params);
}

}  // namespace trifuse
