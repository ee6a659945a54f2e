#include "trifuse/commands.hpp"

#include <cmath>

#include "trifuse/attention.hpp"
#include "trifuse/gradcheck.hpp"
#include "trifuse/losses.hpp"

namespace trifuse::cmd {

namespace {

using ad::GraphBuilder;
using ad::NodePtr;

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

// Values kept away from zero so relu's kink never sits inside the
// finite-difference window.
Matrix random_offzero(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        m.data()[i] = sign * rng.uniform(0.2, 1.2);
    }
    return m;
}

// Fixed reduction weights so matrix-valued ops produce a scalar to check.
// Weights are scaled down by the element count: finite differences of a
// large scalar lose absolute precision, which would swamp structurally-zero
// gradient components (the checker's denominator floors at 1e-8).
GraphBuilder reduce(std::function<NodePtr(const std::vector<NodePtr>&)> fn, Matrix weights) {
    const double inv = 1.0 / static_cast<double>(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) weights.data()[i] *= inv;
    auto w = std::make_shared<Matrix>(std::move(weights));
    return [fn = std::move(fn), w](const std::vector<NodePtr>& leaves) {
        return ad::weighted_sum(fn(leaves), *w);
    };
}

// Consumes leaves in a fixed order to rebuild attention weights.
ad::AttentionParams attention_from(const std::vector<NodePtr>& leaves, std::size_t& cursor) {
    ad::AttentionParams p;
    p.wq = leaves[cursor++];
    p.bq = leaves[cursor++];
    p.wk = leaves[cursor++];
    p.bk = leaves[cursor++];
    p.wv = leaves[cursor++];
    p.bv = leaves[cursor++];
    p.wo = leaves[cursor++];
    p.bo = leaves[cursor++];
    return p;
}

std::vector<Matrix> attention_inputs(Rng& rng, std::size_t d) {
    std::vector<Matrix> inputs;
    for (int i = 0; i < 4; ++i) {
        inputs.push_back(random_matrix(rng, d, d, 0.5));
        inputs.push_back(random_matrix(rng, 1, d, 0.1));
    }
    return inputs;
}

model::EncoderLayerParams layer_from(const std::vector<NodePtr>& leaves, std::size_t& cursor) {
    model::EncoderLayerParams layer;
    layer.att = attention_from(leaves, cursor);
    layer.ln1_gain = leaves[cursor++];
    layer.ln1_bias = leaves[cursor++];
    layer.ff1_w = leaves[cursor++];
    layer.ff1_b = leaves[cursor++];
    layer.ff2_w = leaves[cursor++];
    layer.ff2_b = leaves[cursor++];
    layer.ln2_gain = leaves[cursor++];
    layer.ln2_bias = leaves[cursor++];
    return layer;
}

std::vector<Matrix> layer_inputs(Rng& rng, std::size_t d, std::size_t hidden) {
    std::vector<Matrix> inputs = attention_inputs(rng, d);
    inputs.push_back(random_matrix(rng, 1, d, 0.2));  // ln1 gain, centered below
    inputs.push_back(random_matrix(rng, 1, d, 0.1));
    inputs.push_back(random_matrix(rng, d, hidden, 0.5));
    inputs.push_back(random_matrix(rng, 1, hidden, 0.1));
    inputs.push_back(random_matrix(rng, hidden, d, 0.5));
    inputs.push_back(random_matrix(rng, 1, d, 0.1));
    inputs.push_back(random_matrix(rng, 1, d, 0.2));
    inputs.push_back(random_matrix(rng, 1, d, 0.1));
    // Norm gains sit near one.
    for (std::size_t j = 0; j < d; ++j) {
        inputs[8].data()[j] += 1.0;
        inputs[14].data()[j] += 1.0;
    }
    return inputs;
}

struct Entry {
    std::string name;
    GraphBuilder build;
    std::vector<Matrix> inputs;
};

ModelConfig tiny_config(const GradcheckArgs& args, HeadMode mode) {
    ModelConfig config;
    config.head_mode = mode;
    config.branches = mode == HeadMode::expr ? BranchSet::visual : BranchSet::full;
    config.embed_dim = args.dim;
    config.audio_in = 6;
    config.visual_in = 10;
    config.heads_modality = args.heads;
    config.heads_interaction =
        (2 * args.dim) % (2 * args.heads) == 0 ? 2 * args.heads : args.heads;
    config.seq_len = args.seq_len;
    config.proj_dim = args.dim;
    config.ff_hidden = 2 * args.dim;
    config.dropout_modality = 0.0;
    config.dropout_interaction = 0.0;
    config.expr_classes = 4;
    return config;
}

Sample tiny_sample(Rng& rng, const ModelConfig& config) {
    Sample sample;
    sample.id = "probe";
    sample.audio = random_matrix(rng, config.seq_len, config.audio_in, 0.5);
    sample.visual = random_matrix(rng, config.seq_len, config.visual_in, 0.5);
    for (auto& v : sample.intensities) v = rng.uniform();
    sample.class_target = derive_class_target(sample.intensities);
    return sample;
}

}  // namespace

std::vector<ad::GradCheckResult> gradcheck_all(const GradcheckArgs& args) {
    if (args.dim < 2 || args.seq_len < 1 || args.heads < 1 || args.dim % args.heads != 0) {
        throw ConfigError("gradcheck: need dim >= 2 divisible by heads, seq >= 1");
    }
    const std::size_t t_len = args.seq_len;
    const std::size_t d = args.dim;
    Rng rng(20240401);
    std::vector<Entry> entries;

    entries.push_back({"matmul",
                       reduce([](const auto& l) { return ad::matmul(l[0], l[1]); },
                              random_matrix(rng, t_len, d)),
                       {random_matrix(rng, t_len, d), random_matrix(rng, d, d)}});
    entries.push_back({"add",
                       reduce([](const auto& l) { return ad::add(l[0], l[1]); },
                              random_matrix(rng, t_len, d)),
                       {random_matrix(rng, t_len, d), random_matrix(rng, t_len, d)}});
    entries.push_back({"scale",
                       reduce([](const auto& l) { return ad::scale(l[0], 1.7); },
                              random_matrix(rng, t_len, d)),
                       {random_matrix(rng, t_len, d)}});
    entries.push_back({"add_bias_rows",
                       reduce([](const auto& l) { return ad::add_bias_rows(l[0], l[1]); },
                              random_matrix(rng, t_len, d)),
                       {random_matrix(rng, t_len, d), random_matrix(rng, 1, d)}});
    entries.push_back({"relu",
                       reduce([](const auto& l) { return ad::relu(l[0]); },
                              random_matrix(rng, t_len, d)),
                       {random_offzero(rng, t_len, d)}});
    entries.push_back({"logistic",
                       reduce([](const auto& l) { return ad::logistic(l[0]); },
                              random_matrix(rng, t_len, d)),
                       {random_matrix(rng, t_len, d)}});
    entries.push_back({"softmax_rows",
                       reduce([](const auto& l) { return ad::softmax_rows(l[0]); },
                              random_matrix(rng, t_len, d)),
                       {random_matrix(rng, t_len, d)}});
    entries.push_back(
        {"layer_norm",
         reduce([](const auto& l) { return ad::layer_norm(l[0], l[1], l[2]); },
                random_matrix(rng, t_len, d)),
         {random_matrix(rng, t_len, d), random_matrix(rng, 1, d), random_matrix(rng, 1, d)}});
    entries.push_back({"conv1d",
                       reduce([](const auto& l) { return ad::conv1d_same(l[0], l[1], l[2], 3); },
                              random_matrix(rng, t_len, d)),
                       {random_matrix(rng, t_len, d), random_matrix(rng, 3 * d, d),
                        random_matrix(rng, 1, d)}});
    entries.push_back(
        {"concat_cols",
         reduce([](const auto& l) { return ad::concat_cols({l[0], l[1]}); },
                random_matrix(rng, t_len, 2 * d)),
         {random_matrix(rng, t_len, d), random_matrix(rng, t_len, d)}});
    entries.push_back({"slice_cols",
                       reduce([d](const auto& l) { return ad::slice_cols(l[0], d / 2, d); },
                              random_matrix(rng, t_len, d - d / 2)),
                       {random_matrix(rng, t_len, d)}});
    entries.push_back({"transpose",
                       reduce([](const auto& l) { return ad::transpose(l[0]); },
                              random_matrix(rng, d, t_len)),
                       {random_matrix(rng, t_len, d)}});
    entries.push_back({"mean_rows",
                       reduce([](const auto& l) { return ad::mean_rows(l[0]); },
                              random_matrix(rng, 1, d)),
                       {random_matrix(rng, t_len, d)}});
    entries.push_back({"mean_all", [](const auto& l) { return ad::mean_all(l[0]); },
                       {random_matrix(rng, t_len, d)}});
    entries.push_back({"dropout",
                       reduce(
                           [](const auto& l) {
                               Rng mask_rng(777);
                               return ad::dropout(l[0], 0.3, mask_rng, true);
                           },
                           random_matrix(rng, t_len, d)),
                       {random_matrix(rng, t_len, d)}});
    entries.push_back({"mse",
                       [target = random_matrix(rng, 1, 7)](const auto& l) {
                           return ad::mse_against(l[0], target);
                       },
                       {random_matrix(rng, 1, 7)}});
    {
        std::vector<std::size_t> targets;
        for (std::size_t i = 0; i < t_len; ++i) targets.push_back(i % d);
        entries.push_back({"cross_entropy",
                           [targets](const auto& l) {
                               return ad::cross_entropy_with_indices(l[0], targets);
                           },
                           {random_matrix(rng, t_len, d)}});
        entries.push_back({"gather_true_prob",
                           reduce(
                               [targets](const auto& l) {
                                   return ad::gather_true_prob(l[0], targets);
                               },
                               random_matrix(rng, t_len, 1)),
                           {random_matrix(rng, t_len, d)}});
    }
    {
        Matrix probs(t_len, 1);
        for (std::size_t i = 0; i < probs.size(); ++i) probs.data()[i] = rng.uniform(0.05, 0.95);
        entries.push_back({"focal",
                           [](const auto& l) {
                               return ad::mean_all(ad::focal_pointwise(l[0], 0.25, 2.0));
                           },
                           {probs}});
    }
    {
        std::vector<Matrix> inputs{random_matrix(rng, t_len, d, 0.5)};
        auto weights = attention_inputs(rng, d);
        inputs.insert(inputs.end(), weights.begin(), weights.end());
        const std::size_t heads = args.heads;
        entries.push_back({"multi_head_attention",
                           reduce(
                               [heads](const auto& l) {
                                   std::size_t cursor = 1;
                                   const auto p = attention_from(l, cursor);
                                   return ad::multi_head_attention(l[0], heads, p);
                               },
                               random_matrix(rng, t_len, d)),
                           inputs});
    }
    {
        const std::size_t hidden = 2 * d;
        std::vector<Matrix> inputs{random_matrix(rng, t_len, d, 0.5)};
        auto att = attention_inputs(rng, d);
        inputs.insert(inputs.end(), att.begin(), att.end());
        auto layer = layer_inputs(rng, d, hidden);
        inputs.insert(inputs.end(), layer.begin(), layer.end());
        const std::size_t heads = args.heads;
        entries.push_back({"encoder_block",
                           reduce(
                               [heads](const auto& l) {
                                   std::size_t cursor = 1;
                                   model::EncoderBlockParams p;
                                   p.att = attention_from(l, cursor);
                                   p.layers.push_back(layer_from(l, cursor));
                                   Rng unused(0);
                                   return model::encoder_block(l[0], heads, 0.0, p, false,
                                                               unused);
                               },
                               random_matrix(rng, t_len, 3 * d)),
                           inputs});
    }
    {
        // Composed intensity pipeline: forward, logistic head, weighted
        // regression + classification loss, differentiated through every
        // parameter tensor.
        const ModelConfig config = tiny_config(args, HeadMode::eri);
        Rng init_rng(31337);
        const model::ModelParams params = model::ModelParams::init(config, init_rng);
        const Sample sample = tiny_sample(rng, config);
        const LossWeights weights;
        entries.push_back({"eri_forward_loss",
                           [config, sample, weights](const auto& l) {
                               const auto p = model::ModelParams::from_nodes(config, l);
                               Rng unused(0);
                               const auto fwd =
                                   model::forward(sample, p, config, false, unused);
                               Matrix target(1, 7);
                               for (std::size_t j = 0; j < 7; ++j)
                                   target.data()[j] = sample.intensities[j];
                               auto reg = ad::mse_against(fwd.intensity, std::move(target));
                               auto cls = ad::cross_entropy_with_indices(
                                   fwd.class_logits, {sample.class_target});
                               return ad::add(ad::scale(reg, weights.alpha),
                                              ad::scale(cls, weights.beta));
                           },
                           params.values()});
    }
    {
        const ModelConfig config = tiny_config(args, HeadMode::expr);
        Rng init_rng(4242);
        const model::ModelParams params = model::ModelParams::init(config, init_rng);
        Sample sample = tiny_sample(rng, config);
        sample.class_target = 2;
        entries.push_back({"expr_forward_loss",
                           [config, sample](const auto& l) {
                               const auto p = model::ModelParams::from_nodes(config, l);
                               Rng unused(0);
                               const auto fwd =
                                   model::forward(sample, p, config, false, unused);
                               auto probs = ad::softmax_rows(fwd.class_logits);
                               auto p_true =
                                   ad::gather_true_prob(probs, {sample.class_target});
                               return ad::mean_all(ad::focal_pointwise(p_true, 1.0, 2.0));
                           },
                           params.values()});
    }

    std::vector<ad::GradCheckResult> results;
    results.reserve(entries.size());
    for (const auto& entry : entries) {
        const double bias = entry.name == args.corrupt_op ? 1e-2 : 0.0;
        results.push_back(ad::grad_check(entry.name, entry.build, entry.inputs, args.eps, bias));
    }
    return results;
}

}  // namespace trifuse::cmd
