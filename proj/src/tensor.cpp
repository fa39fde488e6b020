#include "ssc/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ssc {

namespace detail {

Eigen::Index shape_size(const std::vector<int>& shape) {
    Eigen::Index n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape extents must be positive");
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor make_op(std::vector<int> shape, Eigen::ArrayXd value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    if (value.size() != shape_size(node->shape))
        throw std::logic_error("op produced a value of the wrong size");
    node->value = std::move(value);
    bool needs_grad = false;
    for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
    node->requires_grad = needs_grad;
    if (needs_grad) {
        node->grad = Eigen::ArrayXd::Zero(node->value.size());
        node->parents.reserve(parents.size());
        for (const Tensor& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

}  // namespace detail

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
    return from_array(shape, Eigen::ArrayXd::Zero(detail::shape_size(shape)), requires_grad);
}

Tensor Tensor::constant(const std::vector<int>& shape, double value, bool requires_grad) {
    return from_array(shape, Eigen::ArrayXd::Constant(detail::shape_size(shape), value),
                      requires_grad);
}

Tensor Tensor::scalar(double value) { return constant({1}, value, false); }

Tensor Tensor::from_values(const std::vector<int>& shape, std::vector<double> values,
                           bool requires_grad) {
    Eigen::ArrayXd a =
        Eigen::Map<const Eigen::ArrayXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    return from_array(shape, std::move(a), requires_grad);
}

Tensor Tensor::from_array(const std::vector<int>& shape, Eigen::ArrayXd values,
                          bool requires_grad) {
    if (values.size() != detail::shape_size(shape))
        throw std::invalid_argument("data length does not match shape " +
                                    detail::shape_str(shape));
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = shape;
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad = Eigen::ArrayXd::Zero(node->value.size());
    return Tensor(std::move(node));
}

Tensor Tensor::randn(Rng& rng, const std::vector<int>& shape, double stddev, bool requires_grad) {
    Eigen::ArrayXd a(detail::shape_size(shape));
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = stddev * rng.normal();
    return from_array(shape, std::move(a), requires_grad);
}

const Eigen::ArrayXd& Tensor::grad() const {
    if (!node_->requires_grad) throw std::logic_error("grad requested on a no-grad tensor");
    return node_->grad;
}

double Tensor::value() const {
    if (node_->value.size() != 1) throw std::logic_error("value() requires a scalar tensor");
    return node_->value[0];
}

Eigen::ArrayXd& Tensor::leaf_values() {
    if (!node_->parents.empty())
        throw std::logic_error("in-place edits are restricted to leaf tensors");
    return node_->value;
}

void Tensor::set_requires_grad(bool flag) {
    if (!node_->parents.empty())
        throw std::logic_error("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = flag;
    if (flag && node_->grad.size() != node_->value.size())
        node_->grad = Eigen::ArrayXd::Zero(node_->value.size());
    if (!flag) node_->grad.resize(0);
}

void Tensor::zero_grad() {
    if (node_->requires_grad) node_->grad.setZero();
}

void Tensor::backward() const {
    if (node_->value.size() != 1)
        throw std::logic_error("backward() starts from a scalar tensor");
    if (!node_->requires_grad)
        throw std::logic_error("backward() on a tensor that requires no grad");

    // Iterative post-order DFS; the reversed order is a valid topological
    // order (every node precedes its parents). Traversal order is fixed by
    // graph construction, so gradient accumulation is deterministic.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> visited;
    struct Frame {
        detail::TensorNode* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            detail::TensorNode* p = top.node->parents[top.next_parent++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }

    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

}  // namespace ssc
