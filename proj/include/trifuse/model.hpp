#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trifuse/attention.hpp"
#include "trifuse/autodiff.hpp"
#include "trifuse/data.hpp"
#include "trifuse/rng.hpp"

namespace trifuse {

enum class HeadMode { eri, expr };

// Which branches are instantiated; mirrors the modality rows of the results
// table (audio-only, visual-only, both without interaction, full fusion).
enum class BranchSet { audio, visual, av, full };

std::string to_string(HeadMode mode);
std::string to_string(BranchSet branches);
HeadMode head_mode_from_string(const std::string& s);
BranchSet branch_set_from_string(const std::string& s);

struct ModelConfig {
    HeadMode head_mode = HeadMode::eri;
    BranchSet branches = BranchSet::full;
    std::size_t embed_dim = 256;
    std::size_t audio_in = 1024;
    std::size_t visual_in = 1536;
    std::size_t heads_modality = 2;
    std::size_t heads_interaction = 8;
    std::size_t depth_modality = 1;
    std::size_t depth_interaction = 1;
    double dropout_modality = 0.5;
    double dropout_interaction = 0.1;
    std::size_t seq_len = 32;
    std::size_t proj_dim = 256;
    std::size_t ff_hidden = 0;  // 0 resolves to 4 * embed_dim
    std::size_t embed_width = 1;
    std::size_t expr_classes = 8;

    std::size_t ff() const { return ff_hidden == 0 ? 4 * embed_dim : ff_hidden; }
    std::size_t intensity_outputs() const { return 7; }
    std::size_t class_outputs() const {
        return head_mode == HeadMode::expr ? expr_classes : 7;
    }
    bool uses_audio() const {
        return head_mode == HeadMode::eri && branches != BranchSet::visual;
    }
    bool uses_visual() const { return head_mode == HeadMode::expr || branches != BranchSet::audio; }

    void validate() const;
};

namespace model {

// One post-norm transformer encoder layer: attention -> residual + norm ->
// feed-forward -> residual + norm.
struct EncoderLayerParams {
    ad::AttentionParams att;
    ad::NodePtr ln1_gain, ln1_bias;
    ad::NodePtr ff1_w, ff1_b;
    ad::NodePtr ff2_w, ff2_b;
    ad::NodePtr ln2_gain, ln2_bias;
};

// Weights of one width-tripling encoder: the bare attention branch plus the
// stacked transformer layers.
struct EncoderBlockParams {
    ad::AttentionParams att;
    std::vector<EncoderLayerParams> layers;
};

struct EmbedParams {
    ad::NodePtr kernel, bias;
};

struct ModelParams {
    std::vector<std::pair<std::string, ad::NodePtr>> items;  // fixed order

    std::optional<EmbedParams> embed_audio, embed_visual;
    std::optional<EncoderBlockParams> encoder_audio, encoder_visual, encoder_joint;
    ad::NodePtr proj_joint_w, proj_joint_b;    // pooled interaction features -> proj_dim
    ad::NodePtr proj_concat_w, proj_concat_b;  // pooled stacked features -> proj_dim
    ad::NodePtr head_reg_w, head_reg_b;
    ad::NodePtr head_cls_w, head_cls_b;

    static ModelParams init(const ModelConfig& config, Rng& rng);
    // Rebuilds the same structure around externally supplied values or leaf
    // nodes (loaded checkpoints, gradient-check probes). Order and shapes
    // must match init.
    static ModelParams from_values(const ModelConfig& config,
                                   const std::vector<Matrix>& values);
    static ModelParams from_nodes(const ModelConfig& config,
                                  const std::vector<ad::NodePtr>& nodes);

    std::size_t scalar_count() const;
    std::vector<Matrix> values() const;
    void set_values(const std::vector<Matrix>& values);
};

// Closed-form scalar count implied by a config; params.scalar_count() must
// match it for any config.
std::size_t expected_scalar_count(const ModelConfig& config);

// concat(x, attention(x), transformer_stack(x)): triples the width, copying
// x verbatim into the first third.
ad::NodePtr encoder_block(const ad::NodePtr& x, std::size_t heads, double dropout_p,
                          const EncoderBlockParams& params, bool train, Rng& rng);

struct BranchOutputs {
    ad::NodePtr audio_embedded;   // T x d
    ad::NodePtr visual_embedded;  // T x d
    ad::NodePtr audio_encoded;    // T x 3d
    ad::NodePtr visual_encoded;   // T x 3d
    ad::NodePtr joint_embedded;   // T x 2d
    ad::NodePtr joint_encoded;    // T x 6d
    ad::NodePtr stacked_encoded;  // T x 6d
};

struct ForwardResult {
    ad::NodePtr intensity;     // 1 x 7 in [0,1]; null in expr mode
    ad::NodePtr class_logits;  // 1 x class_outputs()
    BranchOutputs branch;
};

// Full pipeline for one sample. Dimension bookkeeping is asserted on every
// call. train enables dropout, which draws from rng.
ForwardResult forward(const Sample& sample, const ModelParams& params, const ModelConfig& config,
                      bool train, Rng& rng);

// Eval-mode intensity (or class-probability) vector for one sample.
std::vector<double> predict(const Sample& sample, const ModelParams& params,
                            const ModelConfig& config);

}  // namespace model

// Per-sample prediction vectors keyed by sample id, in manifest order.
struct PredictionSet {
    std::string mode;
    std::vector<std::pair<std::string, std::vector<double>>> items;
};

// Elementwise arithmetic mean across sets; ids must coincide.
PredictionSet ensemble_average(const std::vector<PredictionSet>& sets);

}  // namespace trifuse
