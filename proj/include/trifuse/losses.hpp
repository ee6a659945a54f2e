#pragma once

#include <cstddef>
#include <vector>

#include "trifuse/matrix.hpp"

namespace trifuse {

struct LossWeights {
    double alpha = 1.0;
    double beta = 0.01;
};

struct FocalParams {
    double alpha_t = 1.0;
    double gamma = 2.0;
};

// Mean over all elements of squared differences. Shapes must match.
double mse_loss(const Matrix& pred, const Matrix& target);

// Mean over rows of -log softmax(logits)[target], via log-sum-exp.
double cross_entropy_loss(const Matrix& logits, const std::vector<std::size_t>& targets);

// alpha * l_reg + beta * l_class.
double eri_loss(double l_reg, double l_class, const LossWeights& w);

// Mean of -alpha_t * (1 - p)^gamma * log(p) over true-class probabilities.
// Nonpositive probabilities are clamped at 1e-12; clamp_count, when given,
// receives the number of clamped entries.
double focal_loss(const std::vector<double>& p_true, const FocalParams& params,
                  std::size_t* clamp_count = nullptr);

}  // namespace trifuse
