#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>

#include "ipldm/common.hpp"
#include "ipldm/rng.hpp"

namespace ipldm {

// Reverse-mode tape node. Forward values in `data`; `grad` is allocated
// lazily and accumulated with +=. `backward_fn` reads this node's grad and
// scatters into the parents' grads.
template <typename T>
struct TensorImpl {
    Shape shape;
    AVec<T> data;
    AVec<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl<T>>> parents;
    std::function<void(TensorImpl<T>&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

// Thread-local switch; sampling and evaluation run with grads off.
template <typename T>
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(Shape shape) {
        TensorT t;
        t.p_ = std::make_shared<TensorImpl<T>>();
        t.p_->shape = std::move(shape);
        t.p_->data.assign(shape_numel(t.p_->shape), T(0));
        return t;
    }

    static TensorT full(Shape shape, T value) {
        TensorT t = zeros(std::move(shape));
        std::fill(t.p_->data.begin(), t.p_->data.end(), value);
        return t;
    }

    static TensorT scalar(T value) { return full({1}, value); }

    static TensorT from(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw DimError("tensor data length does not match shape " + shape_str(shape));
        TensorT t = zeros(std::move(shape));
        std::copy(values.begin(), values.end(), t.p_->data.begin());
        return t;
    }

    static TensorT randn(Shape shape, Rng& rng, T stddev = T(1)) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.p_->data) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return p_ != nullptr; }
    const Shape& shape() const { return p_->shape; }
    int64_t numel() const { return p_->numel(); }
    int64_t dim(int i) const { return p_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(p_->shape.size()); }

    T* data() { return p_->data.data(); }
    const T* data() const { return p_->data.data(); }
    T* grad_data() { return p_->grad.data(); }
    const T* grad_data() const { return p_->grad.data(); }
    bool has_grad() const { return !p_->grad.empty(); }

    T item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor");
        return p_->data[0];
    }

    TensorT& set_requires_grad(bool rg = true) {
        p_->requires_grad = rg;
        return *this;
    }
    bool requires_grad() const { return p_->requires_grad; }

    void zero_grad() {
        if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), T(0));
    }

    void ensure_grad() { p_->ensure_grad(); }

    bool all_finite() const {
        for (T v : p_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void check_finite(const std::string& what) const {
        if (!all_finite()) throw DomainError("non-finite values in " + what);
    }

    // Detached copy of the values (leaf, no history).
    TensorT detach() const {
        TensorT t = zeros(p_->shape);
        std::copy(p_->data.begin(), p_->data.end(), t.p_->data.begin());
        return t;
    }

    std::shared_ptr<TensorImpl<T>>& impl() { return p_; }
    const std::shared_ptr<TensorImpl<T>>& impl() const { return p_; }

    // Builds an op output node. Hooks the graph only when grads are on and
    // some parent is tracked.
    static TensorT make_op(Shape shape, std::vector<TensorT> parents,
                           std::function<void(TensorImpl<T>&)> backward_fn) {
        TensorT out = zeros(std::move(shape));
        bool track = grad_mode<T>();
        bool any = false;
        if (track) {
            for (const auto& p : parents)
                if (p.p_->requires_grad) any = true;
        }
        if (track && any) {
            out.p_->requires_grad = true;
            for (auto& p : parents) out.p_->parents.push_back(p.p_);
            out.p_->backward_fn = std::move(backward_fn);
        }
        return out;
    }

private:
    std::shared_ptr<TensorImpl<T>> p_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode<T>()) { grad_mode<T>() = false; }
    ~NoGradGuard() { grad_mode<T>() = prev_; }
    bool prev_;
};
using NoGrad = NoGradGuard<float>;

// Reverse-mode pass from a scalar loss. Intermediate grads are zeroed each
// call; leaf grads accumulate until zero_grad().
template <typename T>
void backward(TensorT<T> loss) {
    if (loss.numel() != 1) throw ContractError("backward() requires a scalar loss");
    if (!loss.requires_grad())
        throw ContractError("loss is not connected to any tracked tensor");

    // Iterative post-order DFS.
    std::vector<TensorImpl<T>*> topo;
    std::unordered_set<TensorImpl<T>*> visited;
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorImpl<T>* parent = node->parents[idx++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (TensorImpl<T>* node : topo) {
        if (node->backward_fn) {
            node->ensure_grad();
            std::fill(node->grad.begin(), node->grad.end(), T(0));
        }
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = T(1);

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorImpl<T>* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

}  // namespace ipldm
