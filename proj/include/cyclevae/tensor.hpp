#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cyclevae/errors.hpp"

namespace cyclevae {

// All graph arithmetic runs in double. Checkpoints store float32 (see
// model.hpp); loading widens exactly, so fp32 round-trips are bitwise.
using Real = double;
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

/// One value node of the recorded computation. Owns its buffer, its gradient
/// buffer, and — for op outputs — the references and backward rule that the
/// reverse pass replays.
struct TensorNode {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // sized lazily, matches data when present
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Accumulates dLoss/dParent into each parent's grad, given this->grad.
    std::function<void(TensorNode&)> backward_fn;
    int backward_calls = 0;  // reverse-pass visit counter, checked by tests

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major tensor participating in a recorded computation.
/// Copying a Tensor copies the handle, not the buffer; ops produce fresh
/// nodes, so existing values are never mutated by graph building. The one
/// sanctioned mutation is gradient accumulation during a backward pass.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<Real> values,
                            bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const Real> data() const { return node_->data; }
    /// Mutable view. Only meaningful before the tensor enters a graph.
    std::span<Real> mutable_data() { return node_->data; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::span<const Real> grad() const { return node_->grad; }
    void zero_grad() {
        if (node_) node_->grad.assign(node_->data.size(), 0.0);
    }

    /// Value of a single-element tensor.
    Real value() const;

    /// Op name that produced this tensor ("leaf" for inputs/parameters).
    const char* op() const { return node_->op; }

    /// Stable identity, used to key optimizer state.
    const detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

    /// Throws NumericError if any element is NaN/Inf. `what` names the value
    /// in the message.
    void check_finite(const std::string& what) const;

    static Tensor wrap(std::shared_ptr<detail::TensorNode> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

/// Topologically ordered record of the computation reaching one output:
/// every node's inputs precede it, and a backward sweep visits each node
/// exactly once. Only grad-requiring nodes are recorded; constants cannot
/// route gradient.
class ComputationRecord {
public:
    /// Traces the graph below `output`. `reverse_siblings` flips the parent
    /// traversal order, yielding a different (still valid) topological
    /// order; gradient results must not depend on this choice.
    static ComputationRecord trace(const Tensor& output, bool reverse_siblings = false);

    std::size_t node_count() const { return order_.size(); }
    const std::vector<detail::TensorNode*>& nodes() const { return order_; }

    /// Verifies the topological-order invariant (inputs before outputs).
    bool topologically_ordered() const;

    /// Runs the reverse sweep: seeds d(output)/d(output) = 1, then applies
    /// each backward rule once, in reverse order.
    void run_backward();

private:
    std::vector<detail::TensorNode*> order_;
    detail::TensorNode* root_ = nullptr;
};

/// Reverse-mode differentiation of a scalar loss. Every tensor with
/// requires_grad reachable from `loss` receives (accumulates) dLoss/dTensor.
/// Throws UsageError if loss is not a single element or requires no grad.
void backward(const Tensor& loss, bool reverse_siblings = false);

}  // namespace cyclevae
