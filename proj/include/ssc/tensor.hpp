#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ssc/rng.hpp"

namespace ssc {

class Tensor;

namespace detail {

// One node of the computation graph. Children hold shared_ptrs to parents, so
// a step's graph is released as soon as the last handle to its result drops.
struct TensorNode {
    std::vector<int> shape;
    Eigen::ArrayXd value;  // row-major flat storage
    Eigen::ArrayXd grad;   // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(TensorNode&)> backward;
};

}  // namespace detail

// Dense N-dimensional array of doubles with optional reverse-mode gradient
// accumulation. Handles share the underlying node (copying a Tensor aliases
// it); values are immutable once created except for leaf parameter updates
// and gradient accumulation.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

    static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
    static Tensor constant(const std::vector<int>& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor from_values(const std::vector<int>& shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor from_array(const std::vector<int>& shape, Eigen::ArrayXd values,
                             bool requires_grad = false);
    // I.i.d. Gaussian entries with the given standard deviation.
    static Tensor randn(Rng& rng, const std::vector<int>& shape, double stddev,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
    Eigen::Index size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    const Eigen::ArrayXd& values() const { return node_->value; }
    const Eigen::ArrayXd& grad() const;

    // Value of a scalar (size-1) tensor.
    double value() const;
    // Element access by flat row-major index.
    double operator[](Eigen::Index i) const { return node_->value[i]; }

    // In-place edit of a leaf tensor (parameter updates, finite-difference
    // perturbation). Rejected on non-leaf nodes: interior values feed cached
    // backward closures and must not change after creation.
    Eigen::ArrayXd& leaf_values();

    void set_requires_grad(bool flag);
    void zero_grad();

    // Reverse-mode sweep from a scalar. Accumulates into the grad of every
    // requires_grad tensor reachable from this node. One sweep per graph.
    void backward() const;

    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

// Builds an op node. The output requires grad iff any parent does; otherwise
// parents and the backward closure are dropped so inference builds no graph.
Tensor make_op(std::vector<int> shape, Eigen::ArrayXd value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward);

Eigen::Index shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace detail

}  // namespace ssc
