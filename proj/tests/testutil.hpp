#pragma once

#include <Eigen/Geometry>

#include <cmath>
#include <vector>

#include "ssc/geometry.hpp"
#include "ssc/rng.hpp"
#include "ssc/tensor.hpp"

namespace testutil {

// Uniform values in [lo, hi).
inline ssc::Tensor rand_uniform(ssc::Rng& rng, const std::vector<int>& shape, double lo,
                                double hi, bool requires_grad = true) {
    Eigen::Index n = 1;
    for (int d : shape) n *= d;
    Eigen::ArrayXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
    return ssc::Tensor::from_array(shape, std::move(v), requires_grad);
}

// Values with |x| in [min_abs, max_abs), random sign. Keeps finite-difference
// probes away from kinks at zero (relu) and from division blow-ups.
inline ssc::Tensor rand_signed(ssc::Rng& rng, const std::vector<int>& shape, double min_abs,
                               double max_abs, bool requires_grad = true) {
    Eigen::Index n = 1;
    for (int d : shape) n *= d;
    Eigen::ArrayXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mag = rng.uniform(min_abs, max_abs);
        v[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    return ssc::Tensor::from_array(shape, std::move(v), requires_grad);
}

// Sample points inside a rows x cols map whose fractional parts stay in
// [0.2, 0.8], so FD probes never cross a cell boundary.
inline ssc::Tensor rand_interior_points(ssc::Rng& rng, int n, int rows, int cols,
                                        bool requires_grad = true) {
    Eigen::ArrayXd v(2 * n);
    for (int i = 0; i < n; ++i) {
        v[2 * i] = rng.uniform_int(0, cols - 2) + rng.uniform(0.2, 0.8);      // u
        v[2 * i + 1] = rng.uniform_int(0, rows - 2) + rng.uniform(0.2, 0.8);  // v
    }
    return ssc::Tensor::from_array({n, 2}, std::move(v), requires_grad);
}

inline Eigen::ArrayXd rand_coeffs(ssc::Rng& rng, Eigen::Index n) {
    Eigen::ArrayXd c(n);
    for (Eigen::Index i = 0; i < n; ++i) c[i] = rng.normal();
    return c;
}

// Proper rotation from a random unit axis and angle.
inline Eigen::Matrix3d random_rotation(ssc::Rng& rng) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    while (axis.norm() < 1e-6) axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    return Eigen::AngleAxisd(rng.uniform(0.0, 2.0 * M_PI), axis).toRotationMatrix();
}

inline ssc::CameraPose random_pose(ssc::Rng& rng, double translation_range = 2.0) {
    ssc::CameraPose pose;
    pose.rotation = random_rotation(rng);
    pose.translation = Eigen::Vector3d(rng.uniform(-translation_range, translation_range),
                                       rng.uniform(-translation_range, translation_range),
                                       rng.uniform(-translation_range, translation_range));
    return pose;
}

}  // namespace testutil
