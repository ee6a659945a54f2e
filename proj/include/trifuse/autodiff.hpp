#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "trifuse/matrix.hpp"
#include "trifuse/rng.hpp"

namespace trifuse::ad {

class Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of a reverse-mode computation graph: a value, its gradient
// buffer, and a closure that pushes the gradient into the parents.
//
// Gradient semantics follow the usual tape rules: backward() recomputes
// interior gradients from scratch each call, while leaf gradients accumulate
// across calls until zero_grad(). Parameters are long-lived leaves reused by
// every per-sample graph; everything else is dropped when the graph goes out
// of scope.
class Node {
public:
    Matrix value;
    std::string op;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;
    // Leaves with requires_grad collect gradients; 'active' marks nodes on a
    // path to such a leaf (inactive subgraphs are skipped during backward).
    bool requires_grad = false;
    bool active = false;

    bool is_leaf() const noexcept { return parents.empty(); }

    Matrix& grad() {
        if (!grad_.same_shape(value)) grad_ = Matrix::zeros(value.rows(), value.cols());
        return grad_;
    }
    bool has_grad() const noexcept { return grad_.same_shape(value); }
    void zero_grad() {
        if (has_grad()) grad_.fill(0.0);
    }

private:
    Matrix grad_;
};

// Leaf that participates in differentiation (parameters, checked inputs).
NodePtr leaf(Matrix value, std::string name = "leaf");
// Leaf treated as a constant (data, targets).
NodePtr constant(Matrix value, std::string name = "const");

// Runs reverse-mode accumulation from a 1x1 root. Interior gradients are
// reset per call; leaf gradients accumulate, so calling twice without
// zeroing doubles them.
void backward(const NodePtr& root);

// --- primitive ops -----------------------------------------------------------

NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double s);
NodePtr add_bias_rows(const NodePtr& x, const NodePtr& bias);
NodePtr relu(const NodePtr& x);
NodePtr logistic(const NodePtr& x);
NodePtr softmax_rows(const NodePtr& x);
NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps = 1e-5);
NodePtr conv1d_same(const NodePtr& seq, const NodePtr& kernel, const NodePtr& bias,
                    std::size_t width);
NodePtr concat_cols(const std::vector<NodePtr>& parts);
NodePtr slice_cols(const NodePtr& x, std::size_t c0, std::size_t c1);
NodePtr transpose(const NodePtr& x);
// Mean over time: TxD -> 1xD.
NodePtr mean_rows(const NodePtr& x);
// Mean over every element: any shape -> 1x1.
NodePtr mean_all(const NodePtr& x);
// sum(w .* x) -> 1x1, with constant weights; used to reduce matrix outputs to
// a scalar for gradient checking.
NodePtr weighted_sum(const NodePtr& x, Matrix weights);

// Inverted dropout: keep with probability 1-p and scale by 1/(1-p) in train
// mode, identity in eval mode. The mask is drawn at graph-build time.
NodePtr dropout(const NodePtr& x, double p, Rng& rng, bool train);

// --- loss nodes --------------------------------------------------------------

// Mean over all elements of (pred - target)^2.
NodePtr mse_against(const NodePtr& pred, Matrix target);
// Mean over rows of -log softmax(logits)[target], via log-sum-exp.
NodePtr cross_entropy_with_indices(const NodePtr& logits, std::vector<std::size_t> targets);
// Row-wise pick of the true-class probability: BxK -> Bx1.
NodePtr gather_true_prob(const NodePtr& probs, std::vector<std::size_t> targets);
// Elementwise -alpha_t * (1-p)^gamma * log(p) on probabilities in (0,1].
NodePtr focal_pointwise(const NodePtr& p_true, double alpha_t, double gamma);

}  // namespace trifuse::ad
