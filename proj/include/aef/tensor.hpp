#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>

#include "aef/common.hpp"
#include "aef/rng.hpp"

namespace aef {

// Reverse-mode autodiff over dense tensors. The graph is dynamic: every op
// creates a fresh node holding its value, links to its parents and a closure
// that scatters the node's gradient into them. Creation order doubles as a
// topological order, so backward() just replays reachable nodes by
// descending id.
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized lazily by backward()
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    int64_t size() const { return int64_t(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

inline uint64_t next_node_id() {
    static std::atomic<uint64_t> counter{0};
    return ++counter;
}

// Graph recording switch. With recording off, ops still compute values but
// attach no parents or backprop closures (inference mode).
inline bool& grad_recording() {
    static thread_local bool on = true;
    return on;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_recording()) { grad_recording() = false; }
    ~NoGradGuard() { grad_recording() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
};

template <class T>
class Tensor {
  public:
    using Scalar = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value.assign(size_t(numel(n->shape)), v);
        n->requires_grad = requires_grad;
        n->id = next_node_id();
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (int64_t(data.size()) != numel(shape))
            throw DimError("Tensor::from: " + std::to_string(data.size()) +
                           " values for shape " + shape_str(shape));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        n->id = next_node_id();
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v, bool requires_grad = false) { return filled({1}, v, requires_grad); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->value) v = T(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[size_t(i)]; }
    int64_t size() const { return node_->size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    // Ref-qualified: binding the buffer of a temporary Tensor would dangle.
    std::vector<T>& data() & { return node_->value; }
    const std::vector<T>& data() const& { return node_->value; }
    std::vector<T> data() && { return node_->value; }  // by value: temporaries must not leak refs
    std::vector<T>& grad() & {
        node_->ensure_grad();
        return node_->grad;
    }

    T item() const {
        if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
        return node_->value[0];
    }

    // Value copy detached from the graph.
    Tensor detach() const {
        auto n = std::make_shared<Node<T>>();
        n->shape = node_->shape;
        n->value = node_->value;
        n->requires_grad = false;
        n->id = next_node_id();
        return Tensor(std::move(n));
    }

    std::shared_ptr<Node<T>>& node() { return node_; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    // Result node for an op. Grad tracking propagates from the parents; the
    // backprop closure is only attached when some parent needs it.
    static Tensor result(Shape shape, std::vector<std::shared_ptr<Node<T>>> parents,
                         std::function<void(Node<T>&)> backprop) {
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value.resize(size_t(numel(n->shape)));
        n->id = next_node_id();
        bool track = false;
        if (grad_recording())
            for (const auto& p : parents)
                if (p && p->requires_grad) track = true;
        if (track) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backprop = std::move(backprop);
        }
        return Tensor(std::move(n));
    }

  private:
    std::shared_ptr<Node<T>> node_;
};

// Populates grad buffers of every parameter reachable from a scalar loss.
// Each reachable node is visited exactly once, children before parents.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

    for (Node<T>* n : order) n->grad.assign(n->value.size(), T(0));
    loss.node()->grad[0] = T(1);
    for (Node<T>* n : order)
        if (n->backprop) n->backprop(*n);
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace aef
