#include "trifuse/model.hpp"

#include <cmath>
#include <map>
#include <set>

namespace trifuse {

std::string to_string(HeadMode mode) { return mode == HeadMode::eri ? "eri" : "expr"; }

std::string to_string(BranchSet branches) {
    switch (branches) {
        case BranchSet::audio: return "audio";
        case BranchSet::visual: return "visual";
        case BranchSet::av: return "av";
        case BranchSet::full: return "full";
    }
    return "full";
}

HeadMode head_mode_from_string(const std::string& s) {
    if (s == "eri") return HeadMode::eri;
    if (s == "expr") return HeadMode::expr;
    throw ConfigError("unknown head mode '" + s + "' (expected eri or expr)");
}

BranchSet branch_set_from_string(const std::string& s) {
    if (s == "audio") return BranchSet::audio;
    if (s == "visual") return BranchSet::visual;
    if (s == "av") return BranchSet::av;
    if (s == "full") return BranchSet::full;
    throw ConfigError("unknown branch set '" + s + "' (expected audio, visual, av, or full)");
}

void ModelConfig::validate() const {
    if (embed_dim < 1 || seq_len < 1 || proj_dim < 1)
        throw ConfigError("model: dims must be >= 1");
    if (heads_modality < 1 || heads_interaction < 1)
        throw ConfigError("model: head counts must be >= 1");
    if (embed_dim % heads_modality != 0) {
        throw ConfigError("model: embed_dim " + std::to_string(embed_dim) +
                          " not divisible by heads_modality " + std::to_string(heads_modality));
    }
    if ((2 * embed_dim) % heads_interaction != 0) {
        throw ConfigError("model: 2*embed_dim " + std::to_string(2 * embed_dim) +
                          " not divisible by heads_interaction " +
                          std::to_string(heads_interaction));
    }
    if (depth_modality < 1 || depth_interaction < 1)
        throw ConfigError("model: encoder depth must be >= 1");
    if (dropout_modality < 0.0 || dropout_modality >= 1.0 || dropout_interaction < 0.0 ||
        dropout_interaction >= 1.0) {
        throw ConfigError("model: dropout rates must be in [0, 1)");
    }
    if (embed_width % 2 == 0) throw ConfigError("model: embed_width must be odd");
    if (head_mode == HeadMode::expr) {
        if (branches != BranchSet::visual) {
            throw ConfigError("model: expression mode uses the visual branch only");
        }
        if (expr_classes < 2) throw ConfigError("model: expr_classes must be >= 2");
    }
    if (uses_audio() && audio_in < 1) throw ConfigError("model: audio_in must be >= 1");
    if (uses_visual() && visual_in < 1) throw ConfigError("model: visual_in must be >= 1");
}

namespace model {

namespace {

using ad::NodePtr;

// Builds parameters in one fixed order, either freshly initialized or
// adopted from a value list. Linear/conv kernels draw uniformly from
// +-sqrt(6/(fan_in+fan_out)); biases start at zero, norm gains at one.
class ParamBuilder {
public:
    ParamBuilder(ModelParams& out, Rng* rng, const std::vector<Matrix>* values,
                 const std::vector<NodePtr>* nodes = nullptr)
        : out_(out), rng_(rng), values_(values), nodes_(nodes) {}

    NodePtr kernel(const std::string& name, std::size_t rows, std::size_t cols,
                   std::size_t fan_in, std::size_t fan_out) {
        Matrix m(rows, cols);
        if (rng_) {
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng_->uniform(-bound, bound);
        }
        return emit(name, std::move(m), rows, cols);
    }

    NodePtr linear(const std::string& name, std::size_t in, std::size_t out) {
        return kernel(name, in, out, in, out);
    }

    NodePtr zeros(const std::string& name, std::size_t rows, std::size_t cols) {
        return emit(name, Matrix::zeros(rows, cols), rows, cols);
    }

    NodePtr ones(const std::string& name, std::size_t rows, std::size_t cols) {
        Matrix m = rng_ ? Matrix::ones(rows, cols) : Matrix::zeros(rows, cols);
        return emit(name, std::move(m), rows, cols);
    }

    ad::AttentionParams attention(const std::string& prefix, std::size_t d) {
        ad::AttentionParams p;
        p.wq = linear(prefix + ".wq", d, d);
        p.bq = zeros(prefix + ".bq", 1, d);
        p.wk = linear(prefix + ".wk", d, d);
        p.bk = zeros(prefix + ".bk", 1, d);
        p.wv = linear(prefix + ".wv", d, d);
        p.bv = zeros(prefix + ".bv", 1, d);
        p.wo = linear(prefix + ".wo", d, d);
        p.bo = zeros(prefix + ".bo", 1, d);
        return p;
    }

    EncoderBlockParams encoder(const std::string& prefix, std::size_t d, std::size_t depth,
                               std::size_t ff_hidden) {
        EncoderBlockParams block;
        block.att = attention(prefix + ".att", d);
        for (std::size_t l = 0; l < depth; ++l) {
            const std::string lp = prefix + ".trans" + std::to_string(l);
            EncoderLayerParams layer;
            layer.att = attention(lp + ".att", d);
            layer.ln1_gain = ones(lp + ".ln1.gain", 1, d);
            layer.ln1_bias = zeros(lp + ".ln1.bias", 1, d);
            layer.ff1_w = linear(lp + ".ff1.w", d, ff_hidden);
            layer.ff1_b = zeros(lp + ".ff1.b", 1, ff_hidden);
            layer.ff2_w = linear(lp + ".ff2.w", ff_hidden, d);
            layer.ff2_b = zeros(lp + ".ff2.b", 1, d);
            layer.ln2_gain = ones(lp + ".ln2.gain", 1, d);
            layer.ln2_bias = zeros(lp + ".ln2.bias", 1, d);
            block.layers.push_back(std::move(layer));
        }
        return block;
    }

    EmbedParams embed(const std::string& prefix, std::size_t d_in, std::size_t d_out,
                      std::size_t width) {
        EmbedParams e;
        e.kernel = kernel(prefix + ".kernel", width * d_in, d_out, width * d_in, d_out);
        e.bias = zeros(prefix + ".bias", 1, d_out);
        return e;
    }

private:
    NodePtr emit(const std::string& name, Matrix fresh, std::size_t rows, std::size_t cols) {
        NodePtr node;
        if (nodes_) {
            if (next_ >= nodes_->size()) {
                throw ConfigError("model params: node list too short at '" + name + "'");
            }
            node = (*nodes_)[next_++];
        } else if (values_) {
            if (next_ >= values_->size()) {
                throw ConfigError("model params: value list too short at '" + name + "'");
            }
            node = ad::leaf((*values_)[next_++], name);
        } else {
            node = ad::leaf(std::move(fresh), name);
        }
        if (node->value.rows() != rows || node->value.cols() != cols) {
            throw DimensionError("model params: '" + name + "' expects " + std::to_string(rows) +
                                 "x" + std::to_string(cols) + ", got " +
                                 node->value.shape_str());
        }
        out_.items.emplace_back(name, node);
        return node;
    }

    ModelParams& out_;
    Rng* rng_;
    const std::vector<Matrix>* values_;
    const std::vector<NodePtr>* nodes_;
    std::size_t next_ = 0;
};

ModelParams build_params(const ModelConfig& config, Rng* rng, const std::vector<Matrix>* values,
                         const std::vector<NodePtr>* nodes = nullptr) {
    config.validate();
    ModelParams params;
    ParamBuilder b(params, rng, values, nodes);
    const std::size_t d = config.embed_dim;

    if (config.uses_audio()) {
        params.embed_audio = b.embed("embed_a", config.audio_in, d, config.embed_width);
        params.encoder_audio =
            b.encoder("encoder_a", d, config.depth_modality, config.ff());
    }
    if (config.uses_visual()) {
        params.embed_visual = b.embed("embed_v", config.visual_in, d, config.embed_width);
        params.encoder_visual =
            b.encoder("encoder_v", d, config.depth_modality, config.ff());
    }
    if (config.branches == BranchSet::full && config.head_mode == HeadMode::eri) {
        params.encoder_joint =
            b.encoder("encoder_av", 2 * d, config.depth_interaction, 2 * config.ff());
        params.proj_joint_w = b.linear("proj_av.w", 6 * d, config.proj_dim);
        params.proj_joint_b = b.zeros("proj_av.b", 1, config.proj_dim);
    }
    // Width of the pooled feature vector entering the projection layer.
    const std::size_t stacked_width =
        (config.head_mode == HeadMode::expr || config.branches == BranchSet::audio ||
         config.branches == BranchSet::visual)
            ? 3 * d
            : 6 * d;
    params.proj_concat_w = b.linear("proj_cat.w", stacked_width, config.proj_dim);
    params.proj_concat_b = b.zeros("proj_cat.b", 1, config.proj_dim);

    const std::size_t head_in =
        config.branches == BranchSet::full && config.head_mode == HeadMode::eri
            ? 2 * config.proj_dim
            : config.proj_dim;
    if (config.head_mode == HeadMode::eri) {
        params.head_reg_w = b.linear("head_reg.w", head_in, config.intensity_outputs());
        params.head_reg_b = b.zeros("head_reg.b", 1, config.intensity_outputs());
    }
    params.head_cls_w = b.linear("head_cls.w", head_in, config.class_outputs());
    params.head_cls_b = b.zeros("head_cls.b", 1, config.class_outputs());
    return params;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, Rng& rng) {
    return build_params(config, &rng, nullptr);
}

ModelParams ModelParams::from_values(const ModelConfig& config,
                                     const std::vector<Matrix>& values) {
    ModelParams params = build_params(config, nullptr, &values);
    if (values.size() != params.items.size()) {
        throw ConfigError("model params: expected " + std::to_string(params.items.size()) +
                          " tensors, got " + std::to_string(values.size()));
    }
    return params;
}

ModelParams ModelParams::from_nodes(const ModelConfig& config,
                                    const std::vector<ad::NodePtr>& nodes) {
    ModelParams params = build_params(config, nullptr, nullptr, &nodes);
    if (nodes.size() != params.items.size()) {
        throw ConfigError("model params: expected " + std::to_string(params.items.size()) +
                          " tensors, got " + std::to_string(nodes.size()));
    }
    return params;
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, node] : items) n += node->value.size();
    return n;
}

std::vector<Matrix> ModelParams::values() const {
    std::vector<Matrix> out;
    out.reserve(items.size());
    for (const auto& [name, node] : items) out.push_back(node->value);
    return out;
}

void ModelParams::set_values(const std::vector<Matrix>& values) {
    if (values.size() != items.size()) {
        throw ConfigError("model params: expected " + std::to_string(items.size()) +
                          " tensors, got " + std::to_string(values.size()));
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!values[i].same_shape(items[i].second->value)) {
            throw DimensionError("model params: '" + items[i].first + "' expects " +
                                 items[i].second->value.shape_str() + ", got " +
                                 values[i].shape_str());
        }
        items[i].second->value = values[i];
    }
}

std::size_t expected_scalar_count(const ModelConfig& config) {
    const std::size_t d = config.embed_dim;
    const auto attention = [](std::size_t width) { return 4 * (width * width + width); };
    const auto encoder = [&](std::size_t width, std::size_t depth, std::size_t hidden) {
        const std::size_t layer = attention(width) + 2 * (width + width) +
                                  (width * hidden + hidden) + (hidden * width + width);
        return attention(width) + depth * layer;
    };
    std::size_t n = 0;
    if (config.uses_audio()) {
        n += config.embed_width * config.audio_in * d + d;
        n += encoder(d, config.depth_modality, config.ff());
    }
    if (config.uses_visual()) {
        n += config.embed_width * config.visual_in * d + d;
        n += encoder(d, config.depth_modality, config.ff());
    }
    const bool full = config.branches == BranchSet::full && config.head_mode == HeadMode::eri;
    if (full) {
        n += encoder(2 * d, config.depth_interaction, 2 * config.ff());
        n += 6 * d * config.proj_dim + config.proj_dim;
    }
    const std::size_t stacked_width =
        (config.head_mode == HeadMode::expr || config.branches == BranchSet::audio ||
         config.branches == BranchSet::visual)
            ? 3 * d
            : 6 * d;
    n += stacked_width * config.proj_dim + config.proj_dim;
    const std::size_t head_in = full ? 2 * config.proj_dim : config.proj_dim;
    if (config.head_mode == HeadMode::eri) n += head_in * 7 + 7;
    n += head_in * config.class_outputs() + config.class_outputs();
    return n;
}

namespace {

using ad::NodePtr;

NodePtr transformer_layer(const NodePtr& x, std::size_t heads, double dropout_p,
                          const EncoderLayerParams& p, bool train, Rng& rng) {
    NodePtr att = ad::multi_head_attention(x, heads, p.att);
    att = ad::dropout(att, dropout_p, rng, train);
    NodePtr normed = ad::layer_norm(ad::add(x, att), p.ln1_gain, p.ln1_bias);
    NodePtr hidden = ad::relu(ad::add_bias_rows(ad::matmul(normed, p.ff1_w), p.ff1_b));
    NodePtr ff = ad::add_bias_rows(ad::matmul(hidden, p.ff2_w), p.ff2_b);
    ff = ad::dropout(ff, dropout_p, rng, train);
    return ad::layer_norm(ad::add(normed, ff), p.ln2_gain, p.ln2_bias);
}

void require_cols(const NodePtr& node, std::size_t expected, const char* what) {
    if (node->value.cols() != expected) {
        throw NumericError(std::string("forward: ") + what + " has width " +
                           std::to_string(node->value.cols()) + ", expected " +
                           std::to_string(expected));
    }
}

NodePtr embed_sequence(const Matrix& seq, const EmbedParams& p, const ModelConfig& config,
                       std::size_t expected_width, const char* what) {
    if (seq.cols() != expected_width) {
        throw DataError(std::string("forward: ") + what + " feature width " +
                        std::to_string(seq.cols()) + " != expected " +
                        std::to_string(expected_width));
    }
    if (seq.rows() != config.seq_len) {
        throw DataError(std::string("forward: ") + what + " length " +
                        std::to_string(seq.rows()) + " != aligned length " +
                        std::to_string(config.seq_len));
    }
    return ad::conv1d_same(ad::constant(seq), p.kernel, p.bias, config.embed_width);
}

}  // namespace

NodePtr encoder_block(const NodePtr& x, std::size_t heads, double dropout_p,
                      const EncoderBlockParams& params, bool train, Rng& rng) {
    NodePtr att = ad::multi_head_attention(x, heads, params.att);
    att = ad::dropout(att, dropout_p, rng, train);
    NodePtr trans = x;
    for (const auto& layer : params.layers) {
        trans = transformer_layer(trans, heads, dropout_p, layer, train, rng);
    }
    return ad::concat_cols({x, att, trans});
}

ForwardResult forward(const Sample& sample, const ModelParams& params, const ModelConfig& config,
                      bool train, Rng& rng) {
    const std::size_t d = config.embed_dim;
    ForwardResult result;
    std::vector<NodePtr> pooled_streams;

    if (config.uses_audio()) {
        result.branch.audio_embedded =
            embed_sequence(sample.audio, *params.embed_audio, config, config.audio_in, "audio");
        require_cols(result.branch.audio_embedded, d, "embedded audio");
        result.branch.audio_encoded =
            encoder_block(result.branch.audio_embedded, config.heads_modality,
                          config.dropout_modality, *params.encoder_audio, train, rng);
        require_cols(result.branch.audio_encoded, 3 * d, "encoded audio");
    }
    if (config.uses_visual()) {
        result.branch.visual_embedded =
            embed_sequence(sample.visual, *params.embed_visual, config, config.visual_in,
                           "visual");
        require_cols(result.branch.visual_embedded, d, "embedded visual");
        result.branch.visual_encoded =
            encoder_block(result.branch.visual_embedded, config.heads_modality,
                          config.dropout_modality, *params.encoder_visual, train, rng);
        require_cols(result.branch.visual_encoded, 3 * d, "encoded visual");
    }

    const bool full = config.branches == BranchSet::full && config.head_mode == HeadMode::eri;
    if (full) {
        result.branch.joint_embedded =
            ad::concat_cols({result.branch.audio_embedded, result.branch.visual_embedded});
        require_cols(result.branch.joint_embedded, 2 * d, "joint embedding");
        result.branch.joint_encoded =
            encoder_block(result.branch.joint_embedded, config.heads_interaction,
                          config.dropout_interaction, *params.encoder_joint, train, rng);
        require_cols(result.branch.joint_encoded, 6 * d, "joint encoding");
        NodePtr pooled_joint = ad::mean_rows(result.branch.joint_encoded);
        pooled_streams.push_back(ad::add_bias_rows(ad::matmul(pooled_joint, params.proj_joint_w),
                                                   params.proj_joint_b));
    }

    NodePtr stacked;
    switch (config.branches) {
        case BranchSet::audio: stacked = result.branch.audio_encoded; break;
        case BranchSet::visual: stacked = result.branch.visual_encoded; break;
        case BranchSet::av:
        case BranchSet::full:
            stacked =
                ad::concat_cols({result.branch.audio_encoded, result.branch.visual_encoded});
            require_cols(stacked, 6 * d, "stacked encoding");
            break;
    }
    result.branch.stacked_encoded = stacked;
    NodePtr pooled_stacked = ad::mean_rows(stacked);
    pooled_streams.push_back(ad::add_bias_rows(ad::matmul(pooled_stacked, params.proj_concat_w),
                                               params.proj_concat_b));

    NodePtr fused =
        pooled_streams.size() == 1 ? pooled_streams.front() : ad::concat_cols(pooled_streams);

    if (config.head_mode == HeadMode::eri) {
        result.intensity = ad::logistic(
            ad::add_bias_rows(ad::matmul(fused, params.head_reg_w), params.head_reg_b));
    }
    result.class_logits =
        ad::add_bias_rows(ad::matmul(fused, params.head_cls_w), params.head_cls_b);
    return result;
}

std::vector<double> predict(const Sample& sample, const ModelParams& params,
                            const ModelConfig& config) {
    Rng unused(0);
    const ForwardResult r = forward(sample, params, config, /*train=*/false, unused);
    std::vector<double> out;
    if (config.head_mode == HeadMode::eri) {
        const Matrix& m = r.intensity->value;
        out.assign(m.data(), m.data() + m.size());
    } else {
        const Matrix probs = softmax_rows(r.class_logits->value);
        out.assign(probs.data(), probs.data() + probs.size());
    }
    return out;
}

}  // namespace model

PredictionSet ensemble_average(const std::vector<PredictionSet>& sets) {
    if (sets.empty()) throw ConfigError("ensemble: needs at least one prediction set");
    const PredictionSet& first = sets.front();
    PredictionSet out;
    out.mode = first.mode;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < first.items.size(); ++i) index[first.items[i].first] = i;
    for (const auto& set : sets) {
        if (set.mode != first.mode) {
            throw ConfigError("ensemble: mixed modes '" + first.mode + "' and '" + set.mode + "'");
        }
        if (set.items.size() != first.items.size()) {
            throw DataError("ensemble: prediction sets differ in size (" +
                            std::to_string(first.items.size()) + " vs " +
                            std::to_string(set.items.size()) + ")");
        }
        std::string missing;
        for (const auto& [id, values] : set.items) {
            if (!index.count(id)) {
                missing += missing.empty() ? id : (", " + id);
            }
        }
        if (!missing.empty()) {
            throw DataError("ensemble: sample ids not shared by all sets: " + missing);
        }
    }
    out.items = first.items;
    for (std::size_t s = 1; s < sets.size(); ++s) {
        for (const auto& [id, values] : sets[s].items) {
            auto& acc = out.items[index.at(id)].second;
            if (values.size() != acc.size()) {
                throw DataError("ensemble: prediction width differs for sample '" + id + "'");
            }
            for (std::size_t j = 0; j < values.size(); ++j) acc[j] += values[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(sets.size());
    for (auto& [id, values] : out.items) {
        for (double& v : values) v *= inv;
    }
    return out;
}

}  // namespace trifuse
