#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "trifuse/matrix.hpp"

namespace trifuse {

struct PearsonReport {
    std::vector<double> per_class;
    // Columns where predictions or targets had zero variance; their r is
    // defined as 0 rather than NaN (constant early-training outputs).
    std::vector<std::size_t> zero_variance_columns;
    double mean = 0.0;
};

// Column-wise Pearson correlation between two N x C matrices. N must be >= 2.
PearsonReport pearson_per_class(const Matrix& pred, const Matrix& target);

double mean_pearson(const std::vector<double>& per_class);

struct F1Report {
    std::vector<double> per_class;
    double macro = 0.0;
};

// Per-class precision/recall/F1 over hard class predictions, with 0/0 defined
// as 0; macro is the unweighted mean over all K classes.
F1Report macro_f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& target,
                  std::size_t num_classes);

}  // namespace trifuse
