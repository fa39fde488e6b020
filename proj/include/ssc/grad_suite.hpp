#pragma once

// Finite-difference sweep over every differentiable primitive. Each case
// contracts the op's output with a random coefficient vector (so every output
// coordinate influences the loss with a distinct weight) and compares the
// tape's gradients against central differences. Shared by the unit tests, the
// acceptance gate (which runs it across many seeds) and the gradcheck command.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ssc/grad_check.hpp"
#include "ssc/ops.hpp"
#include "ssc/rng.hpp"

namespace ssc {

struct GradSuiteCase {
    std::string op;
    GradCheckReport report;
};

namespace gradsuite_detail {

// Values with |x| in [min_abs, max_abs), random sign: keeps finite-difference
// probes away from kinks at zero (relu) and from division blow-ups.
inline Tensor rand_signed(Rng& rng, const std::vector<int>& shape, double min_abs,
                          double max_abs) {
    Eigen::Index n = 1;
    for (int d : shape) n *= d;
    Eigen::ArrayXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mag = rng.uniform(min_abs, max_abs);
        v[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    return Tensor::from_array(shape, std::move(v), true);
}

inline Tensor rand_uniform(Rng& rng, const std::vector<int>& shape, double lo, double hi) {
    Eigen::Index n = 1;
    for (int d : shape) n *= d;
    Eigen::ArrayXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
    return Tensor::from_array(shape, std::move(v), true);
}

// Points inside a rows x cols map whose fractional parts stay in [0.2, 0.8],
// so probes never cross a bilinear cell boundary.
inline Tensor rand_interior_points(Rng& rng, int n, int rows, int cols) {
    Eigen::ArrayXd v(2 * n);
    for (int i = 0; i < n; ++i) {
        v[2 * i] = rng.uniform_int(0, cols - 2) + rng.uniform(0.2, 0.8);
        v[2 * i + 1] = rng.uniform_int(0, rows - 2) + rng.uniform(0.2, 0.8);
    }
    return Tensor::from_array({n, 2}, std::move(v), true);
}

inline Eigen::ArrayXd rand_coeffs(Rng& rng, Eigen::Index n) {
    Eigen::ArrayXd c(n);
    for (Eigen::Index i = 0; i < n; ++i) c[i] = rng.normal();
    return c;
}

}  // namespace gradsuite_detail

inline std::vector<GradSuiteCase> run_grad_suite(std::uint64_t seed, double tol = 1e-4) {
    using namespace gradsuite_detail;
    Rng rng(seed);
    std::vector<GradSuiteCase> cases;

    using Leaves = std::vector<std::pair<std::string, Tensor>>;
    auto check = [&](const char* op, const std::function<Tensor()>& out_fn, Leaves leaves) {
        const Eigen::ArrayXd coeffs = rand_coeffs(rng, out_fn().size());
        auto loss_fn = [&out_fn, coeffs]() { return weighted_sum(out_fn(), coeffs); };
        cases.push_back({op, check_gradients(loss_fn, leaves, 1e-5, tol)});
    };

    {
        Tensor a = rand_signed(rng, {3, 4}, 0.2, 1.5);
        Tensor b = rand_signed(rng, {3, 4}, 0.2, 1.5);
        check("add", [&] { return add(a, b); }, {{"a", a}, {"b", b}});
        check("sub", [&] { return sub(a, b); }, {{"a", a}, {"b", b}});
        check("mul", [&] { return mul(a, b); }, {{"a", a}, {"b", b}});
        check("div", [&] { return div(a, b); }, {{"a", a}, {"b", b}});
        check("scale", [&] { return scale(a, -1.7); }, {{"a", a}});
        check("exp", [&] { return ssc::exp(a); }, {{"a", a}});
        check("relu", [&] { return relu(a); }, {{"a", a}});
        check("sum", [&] { return ssc::sum(a); }, {{"a", a}});
        check("mean", [&] { return mean(a); }, {{"a", a}});
        check("row_sum", [&] { return row_sum(a); }, {{"a", a}});
        check("reshape", [&] { return reshape(a, {2, 6}); }, {{"a", a}});
        check("slice_cols", [&] { return slice_cols(a, 1, 2); }, {{"a", a}});
        check("concat_dim0", [&] { return concat_dim0(a, b); }, {{"a", a}, {"b", b}});
        const Eigen::ArrayXd w = rand_coeffs(rng, a.size());
        check("weighted_sum", [&] { return weighted_sum(a, w); }, {{"a", a}});
    }
    {
        Tensor p = rand_uniform(rng, {2, 5}, 0.3, 2.0);
        check("log", [&] { return ssc::log(p); }, {{"p", p}});
    }
    {
        Tensor v = rand_signed(rng, {4}, 0.2, 1.5);
        check("broadcast_row", [&] { return broadcast_row(v, 3); }, {{"v", v}});
    }
    {
        Tensor x = rand_signed(rng, {5, 3}, 0.2, 1.5);
        const std::vector<int> rows = {4, 0, 2, 0};  // repeats exercise grad accumulation
        check("gather_rows", [&] { return gather_rows(x, rows); }, {{"x", x}});
        Tensor base = rand_signed(rng, {5, 3}, 0.2, 1.5);
        Tensor repl = rand_signed(rng, {2, 3}, 0.2, 1.5);
        const std::vector<int> idx = {3, 1};
        check("scatter_rows", [&] { return scatter_rows(base, repl, idx); },
              {{"base", base}, {"repl", repl}});
    }
    {
        Tensor x = rand_signed(rng, {3, 4, 5}, 0.2, 1.5);
        check("chw_to_hwc", [&] { return chw_to_hwc(x); }, {{"x", x}});
        check("upsample_nearest2d", [&] { return upsample_nearest2d(x, 2); }, {{"x", x}});
    }
    {
        Tensor a = rand_signed(rng, {3, 4}, 0.2, 1.2);
        Tensor b = rand_signed(rng, {4, 2}, 0.2, 1.2);
        check("matmul", [&] { return matmul(a, b); }, {{"a", a}, {"b", b}});
        Tensor bias = rand_signed(rng, {2}, 0.2, 1.2);
        check("linear", [&] { return linear(a, b, bias); }, {{"x", a}, {"w", b}, {"b", bias}});
        Tensor s = rand_signed(rng, {3}, 0.2, 1.2);
        check("scale_rows", [&] { return scale_rows(a, s); }, {{"x", a}, {"s", s}});
    }
    {
        Tensor l = rand_signed(rng, {6}, 0.1, 2.0);
        check("softmax_normalize", [&] { return softmax_normalize(l); }, {{"l", l}});
        Tensor m = rand_signed(rng, {3, 5}, 0.1, 2.0);
        check("softmax_rows", [&] { return softmax_rows(m); }, {{"m", m}});
        Tensor gamma = rand_uniform(rng, {5}, 0.5, 1.5);
        Tensor beta = rand_signed(rng, {5}, 0.1, 0.8);
        check("layer_norm_rows", [&] { return layer_norm_rows(m, gamma, beta); },
              {{"x", m}, {"gamma", gamma}, {"beta", beta}});
    }
    {
        Tensor x = rand_signed(rng, {2, 5, 6}, 0.2, 1.0);
        Tensor w = rand_signed(rng, {3, 2, 3, 3}, 0.1, 0.6);
        Tensor b = rand_signed(rng, {3}, 0.1, 0.5);
        check("conv2d_s1", [&] { return conv2d(x, w, b, 1, 1); }, {{"x", x}, {"w", w}, {"b", b}});
        check("conv2d_s2", [&] { return conv2d(x, w, b, 2, 1); }, {{"x", x}, {"w", w}, {"b", b}});
    }
    {
        Tensor x = rand_signed(rng, {2, 3, 2, 3}, 0.2, 1.0);
        check("upsample_trilinear", [&] { return upsample_trilinear(x, 2); }, {{"x", x}});
    }
    {
        Tensor fmap = rand_signed(rng, {5, 6, 3}, 0.2, 1.0);
        Tensor pts = rand_interior_points(rng, 4, 5, 6);
        check("bilinear_sample", [&] { return bilinear_sample(fmap, pts); },
              {{"fmap", fmap}, {"pts", pts}});
    }
    {
        Tensor logits = rand_signed(rng, {6, 4}, 0.1, 2.0);
        std::vector<int> targets(6);
        std::vector<std::uint8_t> valid(6, 1);
        valid[2] = 0;
        for (int i = 0; i < 6; ++i) targets[i] = static_cast<int>(rng.uniform_int(0, 3));
        Eigen::ArrayXd cw(4);
        for (int i = 0; i < 4; ++i) cw[i] = rng.uniform(0.5, 2.0);
        check("cross_entropy_loss", [&] { return cross_entropy_loss(logits, targets, cw, valid); },
              {{"logits", logits}});

        Tensor bl = rand_signed(rng, {8}, 0.1, 2.0);
        Eigen::ArrayXd bt(8);
        for (int i = 0; i < 8; ++i) bt[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        check("bce_with_logits_mean", [&] { return bce_with_logits_mean(bl, bt); },
              {{"logits", bl}});
    }

    return cases;
}

}  // namespace ssc
