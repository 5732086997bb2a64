#include "cyclevae/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace cyclevae {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
    auto node = std::make_shared<detail::TensorNode>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<Real> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Real Tensor::value() const {
    if (!node_ || node_->data.size() != 1) {
        throw UsageError("value() requires a single-element tensor, got shape " +
                         (node_ ? shape_str(node_->shape) : std::string("(undefined)")));
    }
    return node_->data[0];
}

void Tensor::check_finite(const std::string& what) const {
    for (Real v : node_->data) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite value in " + what);
        }
    }
}

ComputationRecord ComputationRecord::trace(const Tensor& output, bool reverse_siblings) {
    ComputationRecord record;
    if (!output.requires_grad()) return record;
    record.root_ = const_cast<detail::TensorNode*>(output.node());

    // Iterative post-order DFS over grad-requiring parents: a node is
    // appended only after all of its inputs, giving topological order.
    // Each node is pushed at most once; a visited node is either already
    // appended or an ancestor on the current path (impossible in a DAG).
    std::unordered_set<detail::TensorNode*> visited;
    std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
    stack.emplace_back(record.root_, 0);
    visited.insert(record.root_);
    while (!stack.empty()) {
        const std::size_t top = stack.size() - 1;
        detail::TensorNode* node = stack[top].first;
        const std::size_t n = node->parents.size();
        bool descended = false;
        while (stack[top].second < n) {
            const std::size_t idx =
                reverse_siblings ? n - 1 - stack[top].second : stack[top].second;
            ++stack[top].second;
            detail::TensorNode* parent = node->parents[idx].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
                descended = true;
                break;
            }
        }
        if (!descended) {
            record.order_.push_back(node);
            stack.pop_back();
        }
    }
    return record;
}

bool ComputationRecord::topologically_ordered() const {
    std::unordered_set<const detail::TensorNode*> seen;
    for (const detail::TensorNode* node : order_) {
        for (const auto& parent : node->parents) {
            if (parent->requires_grad && !seen.count(parent.get())) return false;
        }
        if (!seen.insert(node).second) return false;  // duplicate visit
    }
    return true;
}

void ComputationRecord::run_backward() {
    if (order_.empty()) return;
    for (detail::TensorNode* node : order_) node->ensure_grad();
    root_->grad.assign(root_->data.size(), 1.0);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        detail::TensorNode* node = *it;
        if (node->backward_fn) {
            node->backward_fn(*node);
            ++node->backward_calls;
        }
    }
}

void backward(const Tensor& loss, bool reverse_siblings) {
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward requires a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("(undefined)")));
    }
    if (!loss.requires_grad()) {
        throw UsageError("backward on a tensor that requires no gradient");
    }
    ComputationRecord record = ComputationRecord::trace(loss, reverse_siblings);
    record.run_backward();
}

}  // namespace cyclevae
