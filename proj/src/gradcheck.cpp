#include "trifuse/gradcheck.hpp"

#include <cmath>

namespace trifuse::ad {

namespace {

double evaluate(const GraphBuilder& build, const std::vector<Matrix>& inputs) {
    std::vector<NodePtr> leaves;
    leaves.reserve(inputs.size());
    for (const auto& m : inputs) leaves.push_back(constant(m));
    NodePtr root = build(leaves);
    if (root->value.rows() != 1 || root->value.cols() != 1) {
        throw NumericError("grad_check: builder must produce a 1x1 output, got " +
                           root->value.shape_str());
    }
    return root->value.data()[0];
}

}  // namespace

GradCheckResult grad_check(const std::string& op_name, const GraphBuilder& build,
                           const std::vector<Matrix>& inputs, double eps, double grad_bias) {
    if (eps < 1e-6 || eps > 1e-2) {
        throw ConfigError("grad_check: eps must be in [1e-6, 1e-2], got " + std::to_string(eps));
    }
    GradCheckResult result;
    result.op = op_name;

    std::vector<NodePtr> leaves;
    leaves.reserve(inputs.size());
    for (const auto& m : inputs) leaves.push_back(leaf(m));
    NodePtr root = build(leaves);
    if (root->value.rows() != 1 || root->value.cols() != 1) {
        throw NumericError("grad_check: builder must produce a 1x1 output, got " +
                           root->value.shape_str());
    }
    backward(root);

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Matrix& analytic = leaves[li]->grad();
        if (!analytic.all_finite()) {
            result.finite = false;
            result.detail = "non-finite reverse-mode gradient in op '" + op_name + "', input " +
                            std::to_string(li);
            return result;
        }
        std::vector<Matrix> probe = inputs;
        for (std::size_t idx = 0; idx < probe[li].size(); ++idx) {
            const double saved = probe[li].data()[idx];
            // Fourth-order central stencil: truncation shrinks to O(eps^4)
            // while roundoff stays near machine precision over eps.
            probe[li].data()[idx] = saved + eps;
            const double f_p1 = evaluate(build, probe);
            probe[li].data()[idx] = saved - eps;
            const double f_m1 = evaluate(build, probe);
            probe[li].data()[idx] = saved + 2.0 * eps;
            const double f_p2 = evaluate(build, probe);
            probe[li].data()[idx] = saved - 2.0 * eps;
            const double f_m2 = evaluate(build, probe);
            probe[li].data()[idx] = saved;
            const double numeric = (8.0 * (f_p1 - f_m1) - (f_p2 - f_m2)) / (12.0 * eps);
            if (!std::isfinite(numeric)) {
                result.finite = false;
                result.detail = "non-finite finite-difference value in op '" + op_name + "'";
                return result;
            }
            // The half-step and full-step estimates agree to O(eps^2) when f
            // is smooth across the stencil; a large gap means a kink sits
            // inside it and no finite difference is valid at this point.
            const double d_half = (f_p1 - f_m1) / (2.0 * eps);
            const double d_full = (f_p2 - f_m2) / (4.0 * eps);
            if (std::fabs(d_half - d_full) >
                1e-3 * std::max({std::fabs(d_half), std::fabs(d_full), 1.0})) {
                ++result.skipped_nonsmooth;
                continue;
            }
            const double a = analytic.data()[idx] + grad_bias;
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            result.max_rel_err = std::max(result.max_rel_err, std::fabs(a - numeric) / denom);
            ++result.checked;
        }
    }
    return result;
}

}  // namespace trifuse::ad
