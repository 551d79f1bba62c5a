#pragma once

// Dense row-major tensor with a dynamic reverse-mode autodiff graph.
//
// Every Tensor is a handle to a graph node. Operations on tensors that
// require gradients record their parents and a backward rule; backward()
// orders the reachable nodes topologically and runs the rules in reverse.
// Leaf gradients accumulate across backward calls until zero_grad().

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace bmoe {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes do not satisfy an operation's contract.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a precondition other than a shape check is violated.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Thrown for malformed, truncated or unreadable files.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename S>
struct Node {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until a backward pass touches the node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into its parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
};

template <typename S>
class Tensor {
public:
    using value_type = S;
    using NodePtr = std::shared_ptr<Node<S>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    Tensor(Shape shape, std::vector<S> data, bool requires_grad = false) : node_(std::make_shared<Node<S>>()) {
        if (numel(shape) != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                                 shape_str(shape));
        }
        for (std::size_t e : shape) {
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
    }
    static Tensor full(Shape shape, S value, bool requires_grad = false) {
        const std::size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<S>(n, value), requires_grad);
    }
    static Tensor scalar(S value, bool requires_grad = false) { return Tensor({1}, {value}, requires_grad); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }

    const std::vector<S>& data() const { return node_->data; }
    std::vector<S>& mutable_data() { return node_->data; }
    const std::vector<S>& grad() const { return node_->grad; }
    std::vector<S>& mutable_grad() { return node_->grad; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }

    S item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    S operator[](std::size_t i) const { return node_->data[i]; }
    S at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape.back() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf(); }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    void zero_grad() { node_->grad.assign(node_->data.size(), S(0)); }

    /// Copy of the values with no graph history.
    Tensor detach() const { return Tensor(node_->shape, node_->data, false); }

    const Node<S>* id() const { return node_.get(); }
    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

namespace detail {

template <typename S>
void check_finite(const Node<S>& node, const char* op) {
#ifndef NDEBUG
    for (S v : node.data) {
        if (!std::isfinite(v)) throw ContractError(std::string("non-finite value produced by ") + op);
    }
#else
    (void)node;
    (void)op;
#endif
}

// Creates the output node of an operation. Parents and the backward rule
// are only kept when recording is on and some parent needs a gradient.
template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> data, std::vector<Tensor<S>> parents,
                      std::function<void(Node<S>&)> backward, const char* op) {
    auto node = std::make_shared<Node<S>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    check_finite(*node, op);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward);
    }
    return Tensor<S>(std::move(node));
}

}  // namespace detail

/// Topologically ordered record of the operations reachable from a root.
template <typename S>
class Tape {
public:
    static Tape record_from(const Tensor<S>& root) {
        Tape tape;
        if (!root.requires_grad()) return tape;
        std::unordered_set<const Node<S>*> seen;
        // Iterative post-order DFS; parents are emitted before children.
        std::vector<std::pair<Node<S>*, std::size_t>> stack;
        stack.emplace_back(root.node().get(), 0);
        seen.insert(root.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node<S>* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                tape.order_.push_back(node);
                stack.pop_back();
            }
        }
        return tape;
    }

    const std::vector<Node<S>*>& order() const { return order_; }
    std::size_t size() const { return order_.size(); }

private:
    std::vector<Node<S>*> order_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from loss.
template <typename S>
void backward(const Tensor<S>& loss) {
    if (loss.size() != 1) throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    auto tape = Tape<S>::record_from(loss);
    for (Node<S>* node : tape.order()) {
        if (node->is_leaf()) {
            node->ensure_grad();
        } else {
            node->grad.assign(node->data.size(), S(0));
        }
    }
    Node<S>* root = loss.node().get();
    root->grad[0] += S(1);
    const auto& order = tape.order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
    }
}

/// Leaves with requires_grad reachable from t, in discovery order.
template <typename S>
std::vector<const Node<S>*> leaf_parameters(const Tensor<S>& t) {
    std::vector<const Node<S>*> out;
    const auto tape = Tape<S>::record_from(t);
    for (Node<S>* node : tape.order()) {
        if (node->is_leaf()) out.push_back(node);
    }
    return out;
}

}  // namespace bmoe
