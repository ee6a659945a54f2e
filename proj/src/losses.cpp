#include "trifuse/losses.hpp"

#include <cmath>

namespace trifuse {

double mse_loss(const Matrix& pred, const Matrix& target) {
    require_same_shape(pred, target, "mse_loss");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data()[i] - target.data()[i];
        sum += d * d;
    }
    return sum / static_cast<double>(pred.size());
}

double cross_entropy_loss(const Matrix& logits, const std::vector<std::size_t>& targets) {
    const std::size_t batch = logits.rows();
    const std::size_t k = logits.cols();
    if (k < 2) throw DimensionError("cross_entropy_loss: needs >= 2 classes");
    if (targets.size() != batch) {
        throw DimensionError("cross_entropy_loss: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(batch) + " rows");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        if (targets[i] >= k) {
            throw DataError("cross_entropy_loss: class index " + std::to_string(targets[i]) +
                            " out of range [0, " + std::to_string(k) + ")");
        }
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(i, j));
        double lse = 0.0;
        for (std::size_t j = 0; j < k; ++j) lse += std::exp(logits(i, j) - mx);
        sum += mx + std::log(lse) - logits(i, targets[i]);
    }
    return sum / static_cast<double>(batch);
}

double eri_loss(double l_reg, double l_class, const LossWeights& w) {
    if (w.alpha < 0.0 || w.beta < 0.0) throw ConfigError("eri_loss: weights must be >= 0");
    return w.alpha * l_reg + w.beta * l_class;
}

double focal_loss(const std::vector<double>& p_true, const FocalParams& params,
                  std::size_t* clamp_count) {
    if (params.alpha_t < 0.0) throw ConfigError("focal_loss: alpha_t must be >= 0");
    if (params.gamma < 0.0 || params.gamma > 5.0)
        throw ConfigError("focal_loss: gamma must be in [0, 5]");
    if (p_true.empty()) throw DimensionError("focal_loss: empty batch");
    constexpr double p_floor = 1e-12;
    std::size_t clamped = 0;
    double sum = 0.0;
    for (double p : p_true) {
        if (p <= 0.0) {
            p = p_floor;
            ++clamped;
        }
        sum += -params.alpha_t * std::pow(1.0 - p, params.gamma) * std::log(p);
    }
    if (clamp_count) *clamp_count = clamped;
    return sum / static_cast<double>(p_true.size());
}

}  // namespace trifuse
