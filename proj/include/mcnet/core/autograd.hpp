#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "mcnet/core/tensor.hpp"

namespace mcnet {
namespace ag {

// Thread-local switch: with grad mode off, ops produce detached results and
// no tape is built (inference path).
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

// Reverse-mode tape node. VarT is a cheap shared handle; ops connect nodes
// through `parents` and a closure that scatters this node's grad into them.
template <class T>
class VarT {
public:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;  // allocated lazily during backward
        bool requires_grad = false;
        bool has_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;
    };

    VarT() = default;
    explicit VarT(TensorT<T> value, bool requires_grad = false) : n_(std::make_shared<Node>()) {
        n_->value = std::move(value);
        n_->requires_grad = requires_grad;
    }

    bool defined() const { return static_cast<bool>(n_); }
    TensorT<T>& value() { return n_->value; }
    const TensorT<T>& value() const { return n_->value; }
    TensorT<T>& grad() { return n_->grad; }
    const TensorT<T>& grad() const { return n_->grad; }
    bool has_grad() const { return n_ && n_->has_grad; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }
    std::shared_ptr<Node> node() const { return n_; }

    const std::vector<int64_t>& shape() const { return n_->value.shape; }
    int64_t numel() const { return n_->value.numel(); }

    void zero_grad() {
        if (!n_) return;
        n_->grad = TensorT<T>();
        n_->has_grad = false;
    }

    // Accumulate g into this node's grad buffer.
    static void accumulate(Node& node, const TensorT<T>& g) {
        if (!node.has_grad) {
            node.grad = g;
            node.has_grad = true;
        } else {
            for (int64_t i = 0; i < g.numel(); ++i) node.grad[i] += g[i];
        }
    }

    // Build a result node from parents. Result requires grad iff grad mode is
    // on and some parent does; otherwise the tape edge is dropped.
    static VarT make(TensorT<T> value, std::vector<VarT> parents,
                     std::function<void(Node&)> backward) {
        VarT out(std::move(value));
        bool need = false;
        if (grad_mode()) {
            for (const auto& p : parents)
                if (p.defined() && p.requires_grad()) need = true;
        }
        if (need) {
            out.n_->requires_grad = true;
            for (auto& p : parents) out.n_->parents.push_back(p.node());
            out.n_->backward = std::move(backward);
        }
        return out;
    }

    // Reverse-topological traversal from this node. Seeds with ones unless a
    // seed tensor is supplied.
    void backward(const TensorT<T>* seed = nullptr) {
        if (!n_ || !n_->requires_grad) throw std::runtime_error("backward on non-grad var");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.push_back({n_.get(), 0});
        seen.insert(n_.get());
        while (!stack.empty()) {
            Node* node = stack.back().first;
            size_t idx = stack.back().second;
            if (idx < node->parents.size()) {
                stack.back().second++;
                Node* p = node->parents[idx].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        if (seed) {
            check_shape(seed->shape == n_->value.shape, "backward seed");
            accumulate(*n_, *seed);
        } else {
            accumulate(*n_, TensorT<T>::full(n_->value.shape, T(1)));
        }
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* node = *it;
            if (node->backward && node->has_grad) node->backward(*node);
        }
        // Free the tape below this root; leaf grads stay.
        for (Node* node : order) {
            if (node->backward) {
                node->backward = nullptr;
                node->parents.clear();
                node->grad = TensorT<T>();
                node->has_grad = false;
            }
        }
    }

private:
    std::shared_ptr<Node> n_;
};

using Var = VarT<float>;
using VarD = VarT<double>;

}  // namespace ag
}  // namespace mcnet
