#include "trifuse/attention.hpp"

#include <cmath>

namespace trifuse::ad {

NodePtr multi_head_attention(const NodePtr& x, std::size_t heads, const AttentionParams& params) {
    const std::size_t d = x->value.cols();
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("multi_head_attention: width " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    NodePtr q = add_bias_rows(matmul(x, params.wq), params.bq);
    NodePtr k = add_bias_rows(matmul(x, params.wk), params.bk);
    NodePtr v = add_bias_rows(matmul(x, params.wv), params.bv);

    std::vector<NodePtr> head_outputs;
    head_outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
        NodePtr qh = slice_cols(q, c0, c1);
        NodePtr kh = slice_cols(k, c0, c1);
        NodePtr vh = slice_cols(v, c0, c1);
        NodePtr scores = scale(matmul(qh, transpose(kh)), inv_scale);
        NodePtr weights = softmax_rows(scores);
        head_outputs.push_back(matmul(weights, vh));
    }
    NodePtr merged = heads == 1 ? head_outputs.front() : concat_cols(head_outputs);
    return add_bias_rows(matmul(merged, params.wo), params.bo);
}

}  // namespace trifuse::ad
