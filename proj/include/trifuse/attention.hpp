#pragma once

#include "trifuse/autodiff.hpp"

namespace trifuse::ad {

// Weights of one self-attention block. All projections are d x d with 1 x d
// biases.
struct AttentionParams {
    NodePtr wq, bq;
    NodePtr wk, bk;
    NodePtr wv, bv;
    NodePtr wo, bo;
};

// Scaled dot-product self-attention over a T x d sequence: per-head
// softmax(q k^T / sqrt(d/heads)) v, heads concatenated, then output-projected.
// Shape is preserved. d must be divisible by heads.
NodePtr multi_head_attention(const NodePtr& x, std::size_t heads, const AttentionParams& params);

}  // namespace trifuse::ad
