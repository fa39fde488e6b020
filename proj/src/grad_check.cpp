#include "ssc/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace ssc {

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor>>& leaves,
                                double h, double tol) {
    GradCheckReport report;
    report.passed = true;

    for (auto& [name, leaf] : leaves) {
        if (!leaf.requires_grad())
            throw std::invalid_argument("check_gradients: leaf '" + name +
                                        "' does not require gradients");
        Tensor(leaf).zero_grad();  // handles share the node
    }

    Tensor loss = loss_fn();
    if (loss.size() != 1) throw std::invalid_argument("check_gradients: loss must be scalar");
    if (!std::isfinite(loss.value())) {
        report.passed = false;
        report.finite = false;
        report.worst = "loss value";
        return report;
    }
    loss.backward();

    std::vector<Eigen::ArrayXd> analytic;
    analytic.reserve(leaves.size());
    for (auto& [name, leaf] : leaves) analytic.push_back(leaf.grad());

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& [name, leaf] = leaves[li];
        Tensor handle = leaf;
        Eigen::ArrayXd& vals = handle.leaf_values();
        for (Eigen::Index i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + h;
            const double f_plus = loss_fn().value();
            vals[i] = saved - h;
            const double f_minus = loss_fn().value();
            vals[i] = saved;

            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double a = analytic[li][i];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                report.passed = false;
                report.finite = false;
                report.worst = name + "[" + std::to_string(i) + "]";
                return report;
            }
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = name + "[" + std::to_string(i) + "] analytic=" +
                               std::to_string(a) + " numeric=" + std::to_string(numeric);
            }
        }
    }

    report.passed = report.max_rel_error <= tol;
    return report;
}

}  // namespace ssc
