#pragma once

#include <stdexcept>
#include <vector>

#include "ssc/tensor.hpp"

// Differentiable primitives. Every function builds one graph node with a
// hand-derived backward; all of them are exercised by finite-difference
// checks in the test suite. Layout conventions:
//   - rank-2 tensors are [rows, cols], row-major
//   - convolution tensors are [channels, height, width]
//   - sampleable feature maps are [rows, cols, channels]
//   - sample points are [n, 2] as (u, v) = (column, row); integer (u, v)
//     lands exactly on map cell (v, u)
namespace ssc {

// A computation hit non-finite values (diverged training, NaN inputs to a
// numerically guarded op). Kept apart from std::invalid_argument, which
// signals a caller-side contract violation like a shape mismatch.
struct NumericFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Dot product with a fixed coefficient vector; the workhorse for masked sums.
Tensor weighted_sum(const Tensor& a, const Eigen::ArrayXd& coeffs);
// [n, m] -> [n]
Tensor row_sum(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, const std::vector<int>& shape);
// [n, m] -> [n, count], columns [start, start+count)
Tensor slice_cols(const Tensor& a, int start, int count);
// Concatenation along axis 0; trailing extents must match.
Tensor concat_dim0(const Tensor& a, const Tensor& b);
// [d] -> [n, d], every row a copy of v
Tensor broadcast_row(const Tensor& v, int n);
// y[r, :] = x[rows[r], :]
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
// y = base with y[indices[r], :] = rows[r, :]; indices must be distinct and
// in range, with exactly one per row of `rows`.
Tensor scatter_rows(const Tensor& base, const Tensor& rows, const std::vector<int>& indices);
// [c, h, w] -> [h, w, c]
Tensor chw_to_hwc(const Tensor& x);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
// x [n, in] * w [in, out] + b [out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// y[i, :] = x[i, :] * s[i]
Tensor scale_rows(const Tensor& x, const Tensor& s);

// ---- neural-net primitives ----
// Normalizes a logit vector to a distribution: entries in (0,1), sum 1,
// shift-invariant. Rejects non-finite input.
Tensor softmax_normalize(const Tensor& logits);
// Row-wise softmax over [n, m].
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-6);
// x [c_in, h, w], w [c_out, c_in, kh, kw], b [c_out]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
// [c, h, w] -> [c, h*f, w*f]
Tensor upsample_nearest2d(const Tensor& x, int factor);
// [h, w, z, d] -> [h*f, w*f, z*f, d]; cell-center aligned, clamped at borders
// so factor 1 is the identity.
Tensor upsample_trilinear(const Tensor& x, int factor);
// fmap [b, c, d], points [n, 2] -> [n, d]. Zero padding outside the map:
// samples fully outside return zero with zero gradient. Differentiable in
// both the map values and the point coordinates.
Tensor bilinear_sample(const Tensor& fmap, const Tensor& points);
// Single-point convenience; returns [d].
Tensor bilinear_sample_at(const Tensor& fmap, double u, double v);

// ---- losses ----
// Mean class-weighted cross entropy over rows of [k, classes] with integer
// targets; rows with valid[k] == 0 are excluded and the mean runs over the
// included count. Rejects non-finite logits.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& targets,
                          const Eigen::ArrayXd& class_weights,
                          const std::vector<std::uint8_t>& valid);
// Mean binary cross entropy between logits and {0,1} targets, evaluated in
// the numerically stable log1p form. Rejects non-finite logits.
Tensor bce_with_logits_mean(const Tensor& logits, const Eigen::ArrayXd& targets);

}  // namespace ssc
