#include "ssc/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace ssc {

namespace {

using detail::make_op;
using detail::TensorNode;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Eigen::ArrayXd& a, Eigen::Index rows, Eigen::Index cols) {
    return ConstMap(a.data(), rows, cols);
}

MutMap mut_mat(Eigen::ArrayXd& a, Eigen::Index rows, Eigen::Index cols) {
    return MutMap(a.data(), rows, cols);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    detail::shape_str(a.shape()) + " vs " +
                                    detail::shape_str(b.shape()));
}

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    " tensor, got " + detail::shape_str(t.shape()));
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.values().allFinite()) throw NumericFailure(std::string(op) + ": non-finite input");
}

void accum(TensorNode& parent, const Eigen::ArrayXd& g) {
    if (parent.requires_grad) parent.grad += g;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return make_op(a.shape(), a.values() + b.values(), {a, b}, [](TensorNode& self) {
        accum(*self.parents[0], self.grad);
        accum(*self.parents[1], self.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return make_op(a.shape(), a.values() - b.values(), {a, b}, [](TensorNode& self) {
        accum(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) self.parents[1]->grad -= self.grad;
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    return make_op(a.shape(), a.values() * b.values(), {a, b}, [](TensorNode& self) {
        if (self.parents[0]->requires_grad)
            self.parents[0]->grad += self.grad * self.parents[1]->value;
        if (self.parents[1]->requires_grad)
            self.parents[1]->grad += self.grad * self.parents[0]->value;
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    return make_op(a.shape(), a.values() / b.values(), {a, b}, [](TensorNode& self) {
        const Eigen::ArrayXd& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) self.parents[0]->grad += self.grad / bv;
        if (self.parents[1]->requires_grad)
            self.parents[1]->grad -= self.grad * self.value / bv;
    });
}

Tensor scale(const Tensor& a, double s) {
    return make_op(a.shape(), a.values() * s, {a},
                   [s](TensorNode& self) { accum(*self.parents[0], self.grad * s); });
}

Tensor exp(const Tensor& a) {
    return make_op(a.shape(), a.values().exp(), {a}, [](TensorNode& self) {
        accum(*self.parents[0], self.grad * self.value);
    });
}

Tensor log(const Tensor& a) {
    return make_op(a.shape(), a.values().log(), {a}, [](TensorNode& self) {
        accum(*self.parents[0], self.grad / self.parents[0]->value);
    });
}

Tensor relu(const Tensor& a) {
    return make_op(a.shape(), a.values().max(0.0), {a}, [](TensorNode& self) {
        accum(*self.parents[0],
              self.grad * (self.parents[0]->value > 0.0).cast<double>());
    });
}

// ----------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
    return make_op({1}, Eigen::ArrayXd::Constant(1, a.values().sum()), {a},
                   [](TensorNode& self) {
                       if (self.parents[0]->requires_grad)
                           self.parents[0]->grad += self.grad[0];
                   });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor weighted_sum(const Tensor& a, const Eigen::ArrayXd& coeffs) {
    if (coeffs.size() != a.size())
        throw std::invalid_argument("weighted_sum: coefficient length mismatch");
    const double v = (a.values() * coeffs).sum();
    return make_op({1}, Eigen::ArrayXd::Constant(1, v), {a}, [coeffs](TensorNode& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad += self.grad[0] * coeffs;
    });
}

Tensor row_sum(const Tensor& a) {
    require_rank(a, 2, "row_sum");
    const int n = a.dim(0), m = a.dim(1);
    Eigen::ArrayXd out = as_mat(a.values(), n, m).rowwise().sum().array();
    return make_op({n}, std::move(out), {a}, [n, m](TensorNode& self) {
        if (!self.parents[0]->requires_grad) return;
        MutMap pg = mut_mat(self.parents[0]->grad, n, m);
        pg.colwise() += Eigen::Map<const Eigen::VectorXd>(self.grad.data(), n);
    });
}

// ---------------------------------------------------------------------- shape

Tensor reshape(const Tensor& a, const std::vector<int>& shape) {
    if (detail::shape_size(shape) != a.size())
        throw std::invalid_argument("reshape: size mismatch for " + detail::shape_str(shape));
    return make_op(shape, a.values(), {a},
                   [](TensorNode& self) { accum(*self.parents[0], self.grad); });
}

Tensor slice_cols(const Tensor& a, int start, int count) {
    require_rank(a, 2, "slice_cols");
    const int n = a.dim(0), m = a.dim(1);
    if (start < 0 || count <= 0 || start + count > m)
        throw std::invalid_argument("slice_cols: column window out of range");
    Eigen::ArrayXd out(static_cast<Eigen::Index>(n) * count);
    mut_mat(out, n, count) = as_mat(a.values(), n, m).middleCols(start, count);
    return make_op({n, count}, std::move(out), {a}, [n, m, start, count](TensorNode& self) {
        if (!self.parents[0]->requires_grad) return;
        mut_mat(self.parents[0]->grad, n, m).middleCols(start, count) +=
            as_mat(self.grad, n, count);
    });
}

Tensor concat_dim0(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() < 1)
        throw std::invalid_argument("concat_dim0: rank mismatch");
    for (int i = 1; i < a.rank(); ++i)
        if (a.dim(i) != b.dim(i)) throw std::invalid_argument("concat_dim0: trailing dims differ");
    std::vector<int> shape = a.shape();
    shape[0] += b.dim(0);
    Eigen::ArrayXd out(a.size() + b.size());
    out.head(a.size()) = a.values();
    out.tail(b.size()) = b.values();
    const Eigen::Index na = a.size();
    return make_op(shape, std::move(out), {a, b}, [na](TensorNode& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad += self.grad.head(na);
        if (self.parents[1]->requires_grad)
            self.parents[1]->grad += self.grad.tail(self.grad.size() - na);
    });
}

Tensor broadcast_row(const Tensor& v, int n) {
    require_rank(v, 1, "broadcast_row");
    const int d = v.dim(0);
    Eigen::ArrayXd out(static_cast<Eigen::Index>(n) * d);
    mut_mat(out, n, d).rowwise() = Eigen::Map<const Eigen::RowVectorXd>(v.values().data(), d);
    return make_op({n, d}, std::move(out), {v}, [n, d](TensorNode& self) {
        if (!self.parents[0]->requires_grad) return;
        self.parents[0]->grad +=
            as_mat(self.grad, n, d).colwise().sum().array().transpose();
    });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
    require_rank(x, 2, "gather_rows");
    const int n = static_cast<int>(rows.size()), total = x.dim(0), d = x.dim(1);
    if (n == 0) throw std::invalid_argument("gather_rows: empty row list");
    for (int r : rows)
        if (r < 0 || r >= total) throw std::invalid_argument("gather_rows: row index out of range");
    Eigen::ArrayXd out(static_cast<Eigen::Index>(n) * d);
    MutMap om = mut_mat(out, n, d);
    ConstMap xm = as_mat(x.values(), total, d);
    for (int r = 0; r < n; ++r) om.row(r) = xm.row(rows[r]);
    return make_op({n, d}, std::move(out), {x}, [rows, total, d](TensorNode& self) {
        if (!self.parents[0]->requires_grad) return;
        MutMap pg = mut_mat(self.parents[0]->grad, total, d);
        ConstMap g = as_mat(self.grad, static_cast<Eigen::Index>(rows.size()), d);
        for (std::size_t r = 0; r < rows.size(); ++r) pg.row(rows[r]) += g.row(r);
    });
}

Tensor scatter_rows(const Tensor& base, const Tensor& rows, const std::vector<int>& indices) {
    require_rank(base, 2, "scatter_rows");
    require_rank(rows, 2, "scatter_rows");
    const int total = base.dim(0), d = base.dim(1), n = rows.dim(0);
    if (rows.dim(1) != d)
        throw std::invalid_argument("scatter_rows: row width mismatch");
    if (static_cast<int>(indices.size()) != n)
        throw std::invalid_argument("scatter_rows: index count does not match row count");
    std::unordered_set<int> seen;
    for (int idx : indices) {
        if (idx < 0 || idx >= total)
            throw std::invalid_argument("scatter_rows: index out of range");
        if (!seen.insert(idx).second)
            throw std::invalid_argument("scatter_rows: duplicate index");
    }
    Eigen::ArrayXd out = base.values();
    MutMap om = mut_mat(out, total, d);
    ConstMap rm = as_mat(rows.values(), n, d);
    for (int r = 0; r < n; ++r) om.row(indices[r]) = rm.row(r);
    return make_op(base.shape(), std::move(out), {base, rows},
                   [indices, total, d](TensorNode& self) {
                       const int n = static_cast<int>(indices.size());
                       ConstMap g = as_mat(self.grad, total, d);
                       if (self.parents[0]->requires_grad) {
                           Eigen::ArrayXd masked = self.grad;
                           MutMap mm = mut_mat(masked, total, d);
                           for (int idx : indices) mm.row(idx).setZero();
                           self.parents[0]->grad += masked;
                       }
                       if (self.parents[1]->requires_grad) {
                           MutMap rg = mut_mat(self.parents[1]->grad, n, d);
                           for (int r = 0; r < n; ++r) rg.row(r) += g.row(indices[r]);
                       }
                   });
}

Tensor chw_to_hwc(const Tensor& x) {
    require_rank(x, 3, "chw_to_hwc");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Eigen::ArrayXd out(x.size());
    const Eigen::ArrayXd& xv = x.values();
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                out[(static_cast<Eigen::Index>(i) * w + j) * c + ci] =
                    xv[(static_cast<Eigen::Index>(ci) * h + i) * w + j];
    return make_op({h, w, c}, std::move(out), {x}, [c, h, w](TensorNode& self) {
        if (!self.parents[0]->requires_grad) return;
        Eigen::ArrayXd& pg = self.parents[0]->grad;
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    pg[(static_cast<Eigen::Index>(ci) * h + i) * w + j] +=
                        self.grad[(static_cast<Eigen::Index>(i) * w + j) * c + ci];
    });
}

// ------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw std::invalid_argument("matmul: inner dimensions differ");
    Eigen::ArrayXd out(static_cast<Eigen::Index>(m) * n);
    mut_mat(out, m, n) = as_mat(a.values(), m, k) * as_mat(b.values(), k, n);
    return make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
        ConstMap g = as_mat(self.grad, m, n);
        if (self.parents[0]->requires_grad)
            mut_mat(self.parents[0]->grad, m, k) +=
                g * as_mat(self.parents[1]->value, k, n).transpose();
        if (self.parents[1]->requires_grad)
            mut_mat(self.parents[1]->grad, k, n) +=
                as_mat(self.parents[0]->value, m, k).transpose() * g;
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    require_rank(b, 1, "linear");
    const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
    if (w.dim(0) != in || b.dim(0) != out_dim)
        throw std::invalid_argument("linear: weight/bias dimensions inconsistent");
    Eigen::ArrayXd out(static_cast<Eigen::Index>(n) * out_dim);
    mut_mat(out, n, out_dim) = as_mat(x.values(), n, in) * as_mat(w.values(), in, out_dim);
    mut_mat(out, n, out_dim).rowwise() +=
        Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), out_dim);
    return make_op({n, out_dim}, std::move(out), {x, w, b},
                   [n, in, out_dim](TensorNode& self) {
                       ConstMap g = as_mat(self.grad, n, out_dim);
                       if (self.parents[0]->requires_grad)
                           mut_mat(self.parents[0]->grad, n, in) +=
                               g * as_mat(self.parents[1]->value, in, out_dim).transpose();
                       if (self.parents[1]->requires_grad)
                           mut_mat(self.parents[1]->grad, in, out_dim) +=
                               as_mat(self.parents[0]->value, n, in).transpose() * g;
                       if (self.parents[2]->requires_grad)
                           self.parents[2]->grad +=
                               g.colwise().sum().array().transpose();
                   });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
    require_rank(x, 2, "scale_rows");
    require_rank(s, 1, "scale_rows");
    const int n = x.dim(0), d = x.dim(1);
    if (s.dim(0) != n) throw std::invalid_argument("scale_rows: scale length mismatch");
    Eigen::ArrayXd out(x.size());
    mut_mat(out, n, d) = as_mat(x.values(), n, d).array().colwise() *
                        Eigen::Map<const Eigen::ArrayXd>(s.values().data(), n);
    return make_op({n, d}, std::move(out), {x, s}, [n, d](TensorNode& self) {
        ConstMap g = as_mat(self.grad, n, d);
        if (self.parents[0]->requires_grad)
            mut_mat(self.parents[0]->grad, n, d).array() +=
                g.array().colwise() *
                Eigen::Map<const Eigen::ArrayXd>(self.parents[1]->value.data(), n);
        if (self.parents[1]->requires_grad)
            self.parents[1]->grad +=
                (g.array() * as_mat(self.parents[0]->value, n, d).array())
                    .rowwise()
                    .sum();
    });
}

// -------------------------------------------------------------------- softmax

namespace {

Tensor softmax_impl(const Tensor& x, int n, int m) {
    Eigen::ArrayXd out(x.size());
    ConstMap xv = as_mat(x.values(), n, m);
    MutMap ov = mut_mat(out, n, m);
    for (int i = 0; i < n; ++i) {
        const double mx = xv.row(i).maxCoeff();
        ov.row(i) = (xv.row(i).array() - mx).exp();
        ov.row(i) /= ov.row(i).sum();
    }
    return make_op(x.shape(), std::move(out), {x}, [n, m](TensorNode& self) {
        if (!self.parents[0]->requires_grad) return;
        ConstMap y = as_mat(self.value, n, m);
        ConstMap g = as_mat(self.grad, n, m);
        MutMap pg = mut_mat(self.parents[0]->grad, n, m);
        for (int i = 0; i < n; ++i) {
            const double dot = (g.row(i).array() * y.row(i).array()).sum();
            pg.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
        }
    });
}

}  // namespace

Tensor softmax_normalize(const Tensor& logits) {
    require_rank(logits, 1, "softmax_normalize");
    require_finite(logits, "softmax_normalize");
    return softmax_impl(logits, 1, logits.dim(0));
}

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    require_finite(x, "softmax_rows");
    return softmax_impl(x, x.dim(0), x.dim(1));
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 2, "layer_norm_rows");
    const int n = x.dim(0), d = x.dim(1);
    if (gamma.shape() != std::vector<int>{d} || beta.shape() != std::vector<int>{d})
        throw std::invalid_argument("layer_norm_rows: gamma/beta must have the feature width");
    Eigen::ArrayXd xhat(x.size());
    Eigen::ArrayXd inv_std(n);
    ConstMap xv = as_mat(x.values(), n, d);
    MutMap xh = mut_mat(xhat, n, d);
    for (int i = 0; i < n; ++i) {
        const double mu = xv.row(i).mean();
        const double var = (xv.row(i).array() - mu).square().mean();
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        xh.row(i) = (xv.row(i).array() - mu) * inv_std[i];
    }
    Eigen::ArrayXd out(x.size());
    mut_mat(out, n, d) =
        (xh.array().rowwise() *
         Eigen::Map<const Eigen::ArrayXd>(gamma.values().data(), d).transpose())
            .rowwise() +
        Eigen::Map<const Eigen::ArrayXd>(beta.values().data(), d).transpose();
    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [n, d, xhat, inv_std](TensorNode& self) {
                       ConstMap g = as_mat(self.grad, n, d);
                       ConstMap xh = as_mat(xhat, n, d);
                       const auto gam =
                           Eigen::Map<const Eigen::ArrayXd>(self.parents[1]->value.data(), d);
                       if (self.parents[1]->requires_grad)
                           self.parents[1]->grad +=
                               (g.array() * xh.array()).colwise().sum().transpose();
                       if (self.parents[2]->requires_grad)
                           self.parents[2]->grad += g.array().colwise().sum().transpose();
                       if (!self.parents[0]->requires_grad) return;
                       MutMap pg = mut_mat(self.parents[0]->grad, n, d);
                       for (int i = 0; i < n; ++i) {
                           const Eigen::ArrayXd dxh = g.row(i).array().transpose() * gam;
                           const double m1 = dxh.mean();
                           const double m2 = (dxh * xh.row(i).array().transpose()).mean();
                           pg.row(i).array() +=
                               inv_std[i] *
                               (dxh - m1 - xh.row(i).array().transpose() * m2).transpose();
                       }
                   });
}

// ---------------------------------------------------------------- convolution

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    require_rank(b, 1, "conv2d");
    const int c_in = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != c_in || b.dim(0) != c_out)
        throw std::invalid_argument("conv2d: filter/bias channels inconsistent");
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride or padding");
    const int h_out = (h + 2 * pad - kh) / stride + 1;
    const int w_out = (wd + 2 * pad - kw) / stride + 1;
    if (h_out <= 0 || w_out <= 0)
        throw std::invalid_argument("conv2d: kernel larger than padded input");

    // im2col so the contraction is one Eigen product.
    const Eigen::Index patch = static_cast<Eigen::Index>(c_in) * kh * kw;
    const Eigen::Index cols = static_cast<Eigen::Index>(h_out) * w_out;
    RowMat col = RowMat::Zero(patch, cols);
    const Eigen::ArrayXd& xv = x.values();
    for (int ci = 0; ci < c_in; ++ci)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const Eigen::Index prow = (static_cast<Eigen::Index>(ci) * kh + ki) * kw + kj;
                for (int oy = 0; oy < h_out; ++oy) {
                    const int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < w_out; ++ox) {
                        const int ix = ox * stride + kj - pad;
                        if (ix < 0 || ix >= wd) continue;
                        col(prow, static_cast<Eigen::Index>(oy) * w_out + ox) =
                            xv[(static_cast<Eigen::Index>(ci) * h + iy) * wd + ix];
                    }
                }
            }

    Eigen::ArrayXd out(static_cast<Eigen::Index>(c_out) * cols);
    MutMap om = mut_mat(out, c_out, cols);
    om = as_mat(w.values(), c_out, patch) * col;
    om.colwise() += Eigen::Map<const Eigen::VectorXd>(b.values().data(), c_out);

    return make_op(
        {c_out, h_out, w_out}, std::move(out), {x, w, b},
        [c_in, h, wd, c_out, kh, kw, stride, pad, h_out, w_out, patch, cols,
         col](TensorNode& self) {
            ConstMap g = as_mat(self.grad, c_out, cols);
            if (self.parents[1]->requires_grad)
                mut_mat(self.parents[1]->grad, c_out, patch) += g * col.transpose();
            if (self.parents[2]->requires_grad)
                self.parents[2]->grad += g.rowwise().sum().array();
            if (!self.parents[0]->requires_grad) return;
            const RowMat dcol = as_mat(self.parents[1]->value, c_out, patch).transpose() * g;
            Eigen::ArrayXd& pg = self.parents[0]->grad;
            for (int ci = 0; ci < c_in; ++ci)
                for (int ki = 0; ki < kh; ++ki)
                    for (int kj = 0; kj < kw; ++kj) {
                        const Eigen::Index prow =
                            (static_cast<Eigen::Index>(ci) * kh + ki) * kw + kj;
                        for (int oy = 0; oy < h_out; ++oy) {
                            const int iy = oy * stride + ki - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (int ox = 0; ox < w_out; ++ox) {
                                const int ix = ox * stride + kj - pad;
                                if (ix < 0 || ix >= wd) continue;
                                pg[(static_cast<Eigen::Index>(ci) * h + iy) * wd + ix] +=
                                    dcol(prow, static_cast<Eigen::Index>(oy) * w_out + ox);
                            }
                        }
                    }
        });
}

// ----------------------------------------------------------------- upsampling

Tensor upsample_nearest2d(const Tensor& x, int factor) {
    require_rank(x, 3, "upsample_nearest2d");
    if (factor < 1) throw std::invalid_argument("upsample_nearest2d: factor must be >= 1");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = h * factor, wo = w * factor;
    Eigen::ArrayXd out(static_cast<Eigen::Index>(c) * ho * wo);
    const Eigen::ArrayXd& xv = x.values();
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j)
                out[(static_cast<Eigen::Index>(ci) * ho + i) * wo + j] =
                    xv[(static_cast<Eigen::Index>(ci) * h + i / factor) * w + j / factor];
    return make_op({c, ho, wo}, std::move(out), {x}, [c, h, w, factor](TensorNode& self) {
        if (!self.parents[0]->requires_grad) return;
        const int ho = h * factor, wo = w * factor;
        Eigen::ArrayXd& pg = self.parents[0]->grad;
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j)
                    pg[(static_cast<Eigen::Index>(ci) * h + i / factor) * w + j / factor] +=
                        self.grad[(static_cast<Eigen::Index>(ci) * ho + i) * wo + j];
    });
}

namespace {

// Cell-center source coordinate for trilinear upsampling; clamped so border
// cells extrapolate flat and factor 1 degenerates to the identity.
inline void lerp_axis(int i, int factor, int extent, int& lo, int& hi, double& t) {
    double s = (i + 0.5) / factor - 0.5;
    if (s < 0) s = 0;
    if (s > extent - 1) s = extent - 1;
    lo = static_cast<int>(std::floor(s));
    hi = lo + 1 < extent ? lo + 1 : lo;
    t = s - lo;
}

}  // namespace

Tensor upsample_trilinear(const Tensor& x, int factor) {
    require_rank(x, 4, "upsample_trilinear");
    if (factor < 1) throw std::invalid_argument("upsample_trilinear: factor must be >= 1");
    const int h = x.dim(0), w = x.dim(1), z = x.dim(2), d = x.dim(3);
    const int ho = h * factor, wo = w * factor, zo = z * factor;
    const auto src_idx = [w, z, d](int i, int j, int k) {
        return ((static_cast<Eigen::Index>(i) * w + j) * z + k) * d;
    };
    Eigen::ArrayXd out(static_cast<Eigen::Index>(ho) * wo * zo * d);
    const Eigen::ArrayXd& xv = x.values();
    Eigen::Index o = 0;
    for (int i = 0; i < ho; ++i) {
        int i0, i1;
        double ti;
        lerp_axis(i, factor, h, i0, i1, ti);
        for (int j = 0; j < wo; ++j) {
            int j0, j1;
            double tj;
            lerp_axis(j, factor, w, j0, j1, tj);
            for (int k = 0; k < zo; ++k) {
                int k0, k1;
                double tk;
                lerp_axis(k, factor, z, k0, k1, tk);
                for (int ch = 0; ch < d; ++ch, ++o) {
                    const double v00 = (1 - tk) * xv[src_idx(i0, j0, k0) + ch] +
                                       tk * xv[src_idx(i0, j0, k1) + ch];
                    const double v01 = (1 - tk) * xv[src_idx(i0, j1, k0) + ch] +
                                       tk * xv[src_idx(i0, j1, k1) + ch];
                    const double v10 = (1 - tk) * xv[src_idx(i1, j0, k0) + ch] +
                                       tk * xv[src_idx(i1, j0, k1) + ch];
                    const double v11 = (1 - tk) * xv[src_idx(i1, j1, k0) + ch] +
                                       tk * xv[src_idx(i1, j1, k1) + ch];
                    out[o] = (1 - ti) * ((1 - tj) * v00 + tj * v01) +
                             ti * ((1 - tj) * v10 + tj * v11);
                }
            }
        }
    }
    return make_op({ho, wo, zo, d}, std::move(out), {x},
                   [h, w, z, d, factor, src_idx](TensorNode& self) {
                       if (!self.parents[0]->requires_grad) return;
                       const int ho = h * factor, wo = w * factor, zo = z * factor;
                       Eigen::ArrayXd& pg = self.parents[0]->grad;
                       Eigen::Index o = 0;
                       for (int i = 0; i < ho; ++i) {
                           int i0, i1;
                           double ti;
                           lerp_axis(i, factor, h, i0, i1, ti);
                           for (int j = 0; j < wo; ++j) {
                               int j0, j1;
                               double tj;
                               lerp_axis(j, factor, w, j0, j1, tj);
                               for (int k = 0; k < zo; ++k) {
                                   int k0, k1;
                                   double tk;
                                   lerp_axis(k, factor, z, k0, k1, tk);
                                   for (int ch = 0; ch < d; ++ch, ++o) {
                                       const double g = self.grad[o];
                                       pg[src_idx(i0, j0, k0) + ch] +=
                                           g * (1 - ti) * (1 - tj) * (1 - tk);
                                       pg[src_idx(i0, j0, k1) + ch] += g * (1 - ti) * (1 - tj) * tk;
                                       pg[src_idx(i0, j1, k0) + ch] += g * (1 - ti) * tj * (1 - tk);
                                       pg[src_idx(i0, j1, k1) + ch] += g * (1 - ti) * tj * tk;
                                       pg[src_idx(i1, j0, k0) + ch] += g * ti * (1 - tj) * (1 - tk);
                                       pg[src_idx(i1, j0, k1) + ch] += g * ti * (1 - tj) * tk;
                                       pg[src_idx(i1, j1, k0) + ch] += g * ti * tj * (1 - tk);
                                       pg[src_idx(i1, j1, k1) + ch] += g * ti * tj * tk;
                                   }
                               }
                           }
                       }
                   });
}

// ----------------------------------------------------------- bilinear sampling

Tensor bilinear_sample(const Tensor& fmap, const Tensor& points) {
    require_rank(fmap, 3, "bilinear_sample");
    require_rank(points, 2, "bilinear_sample");
    if (points.dim(1) != 2)
        throw std::invalid_argument("bilinear_sample: points must be [n, 2]");
    const int rows = fmap.dim(0), cols = fmap.dim(1), d = fmap.dim(2);
    const int n = points.dim(0);
    const auto cell = [cols, d](int r, int c) {
        return (static_cast<Eigen::Index>(r) * cols + c) * d;
    };
    const auto in_range = [rows, cols](int r, int c) {
        return r >= 0 && r < rows && c >= 0 && c < cols;
    };
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(n) * d);
    const Eigen::ArrayXd& fv = fmap.values();
    const Eigen::ArrayXd& pv = points.values();
    for (int p = 0; p < n; ++p) {
        const double u = pv[2 * p], v = pv[2 * p + 1];
        const int c0 = static_cast<int>(std::floor(u)), r0 = static_cast<int>(std::floor(v));
        const double fu = u - c0, fv_ = v - r0;
        const double wts[4] = {(1 - fu) * (1 - fv_), fu * (1 - fv_), (1 - fu) * fv_, fu * fv_};
        const int rc[4][2] = {{r0, c0}, {r0, c0 + 1}, {r0 + 1, c0}, {r0 + 1, c0 + 1}};
        for (int q = 0; q < 4; ++q) {
            if (!in_range(rc[q][0], rc[q][1])) continue;  // zero padding
            const Eigen::Index base = cell(rc[q][0], rc[q][1]);
            for (int ch = 0; ch < d; ++ch)
                out[static_cast<Eigen::Index>(p) * d + ch] += wts[q] * fv[base + ch];
        }
    }
    return make_op(
        {n, d}, std::move(out), {fmap, points}, [rows, cols, d, n, cell, in_range](TensorNode& self) {
            const Eigen::ArrayXd& fv = self.parents[0]->value;
            const Eigen::ArrayXd& pv = self.parents[1]->value;
            const bool want_f = self.parents[0]->requires_grad;
            const bool want_p = self.parents[1]->requires_grad;
            for (int p = 0; p < n; ++p) {
                const double u = pv[2 * p], v = pv[2 * p + 1];
                const int c0 = static_cast<int>(std::floor(u)),
                          r0 = static_cast<int>(std::floor(v));
                const double fu = u - c0, fv_ = v - r0;
                const double wts[4] = {(1 - fu) * (1 - fv_), fu * (1 - fv_), (1 - fu) * fv_,
                                       fu * fv_};
                // d(weight)/du and d(weight)/dv per corner; out-of-range
                // corners read a zero feature, so they drop out naturally.
                const double dwu[4] = {-(1 - fv_), (1 - fv_), -fv_, fv_};
                const double dwv[4] = {-(1 - fu), -fu, (1 - fu), fu};
                const int rc[4][2] = {{r0, c0}, {r0, c0 + 1}, {r0 + 1, c0}, {r0 + 1, c0 + 1}};
                double du = 0, dv = 0;
                for (int q = 0; q < 4; ++q) {
                    if (!in_range(rc[q][0], rc[q][1])) continue;
                    const Eigen::Index base = cell(rc[q][0], rc[q][1]);
                    for (int ch = 0; ch < d; ++ch) {
                        const double g = self.grad[static_cast<Eigen::Index>(p) * d + ch];
                        if (want_f) self.parents[0]->grad[base + ch] += wts[q] * g;
                        du += dwu[q] * fv[base + ch] * g;
                        dv += dwv[q] * fv[base + ch] * g;
                    }
                }
                if (want_p) {
                    self.parents[1]->grad[2 * p] += du;
                    self.parents[1]->grad[2 * p + 1] += dv;
                }
            }
        });
}

Tensor bilinear_sample_at(const Tensor& fmap, double u, double v) {
    Tensor pt = Tensor::from_values({1, 2}, {u, v});
    return reshape(bilinear_sample(fmap, pt), {fmap.dim(2)});
}

// --------------------------------------------------------------------- losses

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& targets,
                          const Eigen::ArrayXd& class_weights,
                          const std::vector<std::uint8_t>& valid) {
    require_rank(logits, 2, "cross_entropy_loss");
    require_finite(logits, "cross_entropy_loss");
    const int k = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(targets.size()) != k || static_cast<int>(valid.size()) != k)
        throw std::invalid_argument("cross_entropy_loss: target/valid length mismatch");
    if (class_weights.size() != c)
        throw std::invalid_argument("cross_entropy_loss: weight count must equal class count");
    Eigen::Index n_valid = 0;
    for (int i = 0; i < k; ++i)
        if (valid[i]) {
            if (targets[i] < 0 || targets[i] >= c)
                throw std::invalid_argument("cross_entropy_loss: target class out of range");
            ++n_valid;
        }
    if (n_valid == 0) throw std::invalid_argument("cross_entropy_loss: no valid rows");

    ConstMap lm = as_mat(logits.values(), k, c);
    double loss = 0;
    for (int i = 0; i < k; ++i) {
        if (!valid[i]) continue;
        const double mx = lm.row(i).maxCoeff();
        const double lse = mx + std::log((lm.row(i).array() - mx).exp().sum());
        loss += class_weights[targets[i]] * (lse - lm(i, targets[i]));
    }
    loss /= static_cast<double>(n_valid);
    return make_op({1}, Eigen::ArrayXd::Constant(1, loss), {logits},
                   [k, c, targets, class_weights, valid, n_valid](TensorNode& self) {
                       if (!self.parents[0]->requires_grad) return;
                       const double g = self.grad[0] / static_cast<double>(n_valid);
                       ConstMap lm = as_mat(self.parents[0]->value, k, c);
                       MutMap pg = mut_mat(self.parents[0]->grad, k, c);
                       for (int i = 0; i < k; ++i) {
                           if (!valid[i]) continue;
                           const double mx = lm.row(i).maxCoeff();
                           Eigen::ArrayXd p = (lm.row(i).array() - mx).exp().transpose();
                           p /= p.sum();
                           p[targets[i]] -= 1.0;
                           pg.row(i).array() +=
                               g * class_weights[targets[i]] * p.transpose();
                       }
                   });
}

Tensor bce_with_logits_mean(const Tensor& logits, const Eigen::ArrayXd& targets) {
    require_finite(logits, "bce_with_logits_mean");
    if (targets.size() != logits.size())
        throw std::invalid_argument("bce_with_logits_mean: target length mismatch");
    const Eigen::ArrayXd& x = logits.values();
    // max(x,0) - x*t + log(1 + exp(-|x|))
    const double loss =
        (x.max(0.0) - x * targets + (1.0 + (-x.abs()).exp()).log()).mean();
    return make_op({1}, Eigen::ArrayXd::Constant(1, loss), {logits},
                   [targets](TensorNode& self) {
                       if (!self.parents[0]->requires_grad) return;
                       const Eigen::ArrayXd& x = self.parents[0]->value;
                       const Eigen::ArrayXd sig = 1.0 / (1.0 + (-x).exp());
                       self.parents[0]->grad +=
                           self.grad[0] * (sig - targets) / static_cast<double>(x.size());
                   });
}

}  // namespace ssc
