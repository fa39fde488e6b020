#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

// Outcome of one analytic-vs-central-difference comparison.
// `worst` names the leaf and flat coordinate with the largest relative error.
struct GradCheckReport {
    bool passed = false;
    bool finite = true;
    double max_rel_error = 0.0;
    std::string worst;
};

// Compares the tape's gradients against central differences for every
// coordinate of every leaf. `loss_fn` must rebuild the scalar loss from the
// current leaf values on each call. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6); any non-finite
// value fails the check outright.
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor>>& leaves,
                                double h = 1e-5, double tol = 1e-4);

}  // namespace ssc
