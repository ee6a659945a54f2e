#include "trifuse/runconfig.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace trifuse {

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::size_t parse_size(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const long long n = std::stoll(v, &pos);
        if (pos != v.size() || n < 0) throw std::invalid_argument(v);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer '" + v + "' for key '" + key + "'");
    }
}

double parse_real(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number '" + v + "' for key '" + key + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config: bad boolean '" + v + "' for key '" + key + "'");
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const unsigned long long n = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer '" + v + "' for key '" + key + "'");
    }
}

void apply_model_key(ModelConfig& m, const std::string& key, const std::string& value) {
    if (key == "mode") m.head_mode = head_mode_from_string(value);
    else if (key == "branches") m.branches = branch_set_from_string(value);
    else if (key == "embed_dim") m.embed_dim = parse_size(value, key);
    else if (key == "audio_in") m.audio_in = parse_size(value, key);
    else if (key == "visual_in") m.visual_in = parse_size(value, key);
    else if (key == "heads_modality") m.heads_modality = parse_size(value, key);
    else if (key == "heads_interaction") m.heads_interaction = parse_size(value, key);
    else if (key == "depth_modality") m.depth_modality = parse_size(value, key);
    else if (key == "depth_interaction") m.depth_interaction = parse_size(value, key);
    else if (key == "dropout_modality") m.dropout_modality = parse_real(value, key);
    else if (key == "dropout_interaction") m.dropout_interaction = parse_real(value, key);
    else if (key == "seq_len") m.seq_len = parse_size(value, key);
    else if (key == "proj_dim") m.proj_dim = parse_size(value, key);
    else if (key == "ff_hidden") m.ff_hidden = parse_size(value, key);
    else if (key == "embed_width") m.embed_width = parse_size(value, key);
    else if (key == "expr_classes") m.expr_classes = parse_size(value, key);
    else throw ConfigError("config: unknown key '" + key + "' in [model]");
}

void apply_train_key(TrainConfig& t, const std::string& key, const std::string& value) {
    if (key == "lr") t.lr = parse_real(value, key);
    else if (key == "batch_size") t.batch_size = parse_size(value, key);
    else if (key == "max_epochs") t.max_epochs = parse_size(value, key);
    else if (key == "patience") t.patience = parse_size(value, key);
    else if (key == "ema_decay") t.ema_decay = parse_real(value, key);
    else if (key == "clip_max_norm") t.clip_max_norm = parse_real(value, key);
    else if (key == "clip_norm_type") t.clip_norm_type = static_cast<int>(parse_size(value, key));
    else if (key == "weight_decay") t.weight_decay = parse_real(value, key);
    else if (key == "seed") t.seed = parse_u64(value, key);
    else if (key == "alpha") t.loss_weights.alpha = parse_real(value, key);
    else if (key == "beta") t.loss_weights.beta = parse_real(value, key);
    else if (key == "focal_alpha") t.focal.alpha_t = parse_real(value, key);
    else if (key == "focal_gamma") t.focal.gamma = parse_real(value, key);
    else if (key == "use_class_loss") t.use_class_loss = parse_bool(value, key);
    else if (key == "use_ema") t.use_ema = parse_bool(value, key);
    else if (key == "use_l2") t.use_l2 = parse_bool(value, key);
    else if (key == "use_clip") t.use_clip = parse_bool(value, key);
    else throw ConfigError("config: unknown key '" + key + "' in [train]");
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig config;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') continue;
        if (stripped.front() == '[' && stripped.back() == ']') {
            section = stripped.substr(1, stripped.size() - 2);
            if (section != "model" && section != "train" && section != "data") {
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (section == "model") {
            apply_model_key(config.model, key, value);
        } else if (section == "train") {
            apply_train_key(config.train, key, value);
        } else if (section == "data") {
            if (key == "manifest") config.manifest = value;
            else throw ConfigError("config: unknown key '" + key + "' in [data]");
        } else {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": key outside any section");
        }
    }
    return config;
}

std::string emit_run_config(const RunConfig& config) {
    const ModelConfig& m = config.model;
    const TrainConfig& t = config.train;
    std::ostringstream out;
    out << "[model]\n";
    out << "mode = " << to_string(m.head_mode) << "\n";
    out << "branches = " << to_string(m.branches) << "\n";
    out << "embed_dim = " << m.embed_dim << "\n";
    out << "audio_in = " << m.audio_in << "\n";
    out << "visual_in = " << m.visual_in << "\n";
    out << "heads_modality = " << m.heads_modality << "\n";
    out << "heads_interaction = " << m.heads_interaction << "\n";
    out << "depth_modality = " << m.depth_modality << "\n";
    out << "depth_interaction = " << m.depth_interaction << "\n";
    out << "dropout_modality = " << format_double(m.dropout_modality) << "\n";
    out << "dropout_interaction = " << format_double(m.dropout_interaction) << "\n";
    out << "seq_len = " << m.seq_len << "\n";
    out << "proj_dim = " << m.proj_dim << "\n";
    out << "ff_hidden = " << m.ff_hidden << "\n";
    out << "embed_width = " << m.embed_width << "\n";
    out << "expr_classes = " << m.expr_classes << "\n";
    out << "\n[train]\n";
    out << "lr = " << format_double(t.lr) << "\n";
    out << "batch_size = " << t.batch_size << "\n";
    out << "max_epochs = " << t.max_epochs << "\n";
    out << "patience = " << t.patience << "\n";
    out << "ema_decay = " << format_double(t.ema_decay) << "\n";
    out << "clip_max_norm = " << format_double(t.clip_max_norm) << "\n";
    out << "clip_norm_type = " << t.clip_norm_type << "\n";
    out << "weight_decay = " << format_double(t.weight_decay) << "\n";
    out << "seed = " << t.seed << "\n";
    out << "alpha = " << format_double(t.loss_weights.alpha) << "\n";
    out << "beta = " << format_double(t.loss_weights.beta) << "\n";
    out << "focal_alpha = " << format_double(t.focal.alpha_t) << "\n";
    out << "focal_gamma = " << format_double(t.focal.gamma) << "\n";
    out << "use_class_loss = " << (t.use_class_loss ? "true" : "false") << "\n";
    out << "use_ema = " << (t.use_ema ? "true" : "false") << "\n";
    out << "use_l2 = " << (t.use_l2 ? "true" : "false") << "\n";
    out << "use_clip = " << (t.use_clip ? "true" : "false") << "\n";
    out << "\n[data]\n";
    out << "manifest = " << config.manifest << "\n";
    return out.str();
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config '" + path.string() + "': cannot open");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str());
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("config '" + path.string() + "': cannot open for writing");
    out << emit_run_config(config);
}

}  // namespace trifuse
