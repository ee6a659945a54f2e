#include "trifuse/metrics.hpp"

#include <cmath>

namespace trifuse {

PearsonReport pearson_per_class(const Matrix& pred, const Matrix& target) {
    require_same_shape(pred, target, "pearson_per_class");
    const std::size_t n = pred.rows();
    const std::size_t c = pred.cols();
    if (n < 2) throw NumericError("pearson_per_class: needs at least 2 rows, got " +
                                  std::to_string(n));
    PearsonReport report;
    report.per_class.resize(c, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
        double mp = 0.0, mt = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mp += pred(i, j);
            mt += target(i, j);
        }
        mp /= static_cast<double>(n);
        mt /= static_cast<double>(n);
        double spt = 0.0, spp = 0.0, stt = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dp = pred(i, j) - mp;
            const double dt = target(i, j) - mt;
            spt += dp * dt;
            spp += dp * dp;
            stt += dt * dt;
        }
        if (spp == 0.0 || stt == 0.0) {
            report.per_class[j] = 0.0;
            report.zero_variance_columns.push_back(j);
        } else {
            report.per_class[j] = spt / std::sqrt(spp * stt);
        }
    }
    report.mean = mean_pearson(report.per_class);
    return report;
}

double mean_pearson(const std::vector<double>& per_class) {
    if (per_class.empty()) throw NumericError("mean_pearson: empty vector");
    double sum = 0.0;
    for (double r : per_class) sum += r;
    return sum / static_cast<double>(per_class.size());
}

F1Report macro_f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& target,
                  std::size_t num_classes) {
    if (pred.size() != target.size()) {
        throw DimensionError("macro_f1: " + std::to_string(pred.size()) + " predictions vs " +
                             std::to_string(target.size()) + " targets");
    }
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] >= num_classes || target[i] >= num_classes) {
            throw DataError("macro_f1: class index out of range [0, " +
                            std::to_string(num_classes) + ")");
        }
        if (pred[i] == target[i]) {
            ++tp[pred[i]];
        } else {
            ++fp[pred[i]];
            ++fn[target[i]];
        }
    }
    F1Report report;
    report.per_class.resize(num_classes, 0.0);
    double sum = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double denom = static_cast<double>(2 * tp[k] + fp[k] + fn[k]);
        const double f1 = denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp[k]) / denom;
        report.per_class[k] = f1;
        sum += f1;
    }
    report.macro = sum / static_cast<double>(num_classes);
    return report;
}

}  // namespace trifuse
