#pragma once

#include <functional>
#include <string>
#include <vector>

#include "trifuse/autodiff.hpp"

namespace trifuse::ad {

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    bool finite = true;
    std::size_t checked = 0;   // number of compared components
    // Components whose finite differences straddled a non-smooth point
    // (a relu kink): the two stencil estimates disagreed, so no comparison
    // is meaningful there. Bounded to a small fraction of `checked`.
    std::size_t skipped_nonsmooth = 0;
    std::string detail;  // set when a check cannot be trusted

    bool passed(double threshold) const {
        return finite && max_rel_err < threshold &&
               skipped_nonsmooth * 10 <= checked + skipped_nonsmooth;
    }
};

// Builds a 1x1 graph over leaves carrying the given inputs.
using GraphBuilder = std::function<NodePtr(const std::vector<NodePtr>&)>;

// Compares reverse-mode gradients against central finite differences for
// every component of every input. The builder is re-invoked for each
// perturbed evaluation, so it must be a pure function of the leaf values.
// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
// grad_bias is a test hook: it is added to every analytic component before
// comparison, simulating a defective gradient.
GradCheckResult grad_check(const std::string& op_name, const GraphBuilder& build,
                           const std::vector<Matrix>& inputs, double eps = 1e-4,
                           double grad_bias = 0.0);

}  // namespace trifuse::ad
