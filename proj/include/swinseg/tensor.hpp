#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "swinseg/errors.hpp"

namespace swinseg {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ")";
    return os.str();
}

// Dense row-major tensor. `grad`, when allocated, always matches `data` in
// length. Ops never mutate their inputs; parameters are updated in place by
// the optimizer between steps, when no live graph references them.
template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    int64_t dim(size_t i) const { return shape[i]; }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }
};

template <typename T>
using Tensor = std::shared_ptr<TensorImpl<T>>;

template <typename T>
Tensor<T> make_tensor(Shape shape, bool requires_grad = false) {
    auto t = std::make_shared<TensorImpl<T>>();
    t->shape = std::move(shape);
    t->data.assign(static_cast<size_t>(shape_numel(t->shape)), T(0));
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
Tensor<T> make_tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    auto t = std::make_shared<TensorImpl<T>>();
    t->shape = std::move(shape);
    if (static_cast<int64_t>(data.size()) != shape_numel(t->shape))
        throw DimError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(t->shape));
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
Tensor<T> full_like_shape(const Shape& shape, T value) {
    auto t = make_tensor<T>(shape);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

template <typename T>
Tensor<T> scalar_tensor(T value) {
    auto t = make_tensor<T>(Shape{1});
    t->data[0] = value;
    return t;
}

template <typename T>
bool tensor_finite(const TensorImpl<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

// Reverse-mode tape. Ops append nodes in execution order, which is already a
// topological order; backward() walks it in reverse. A graph instance is
// single-threaded and usually lives for one forward/backward pair.
template <typename T>
class Graph {
  public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    void set_recording(bool r) { recording_ = r; }

    // Registers a node if recording and some input carries gradient. Returns
    // true when the node was recorded (the op then knows `out` needs context).
    bool wants_grad(const std::vector<Tensor<T>>& inputs) const {
        if (!recording_) return false;
        for (const auto& in : inputs)
            if (in && in->requires_grad) return true;
        return false;
    }

    void record(const char* op, std::vector<Tensor<T>> inputs, Tensor<T> out,
                std::function<void()> backward) {
        out->requires_grad = true;
        nodes_.push_back(Node{op, std::move(inputs), std::move(out), std::move(backward)});
    }

    // Accumulates gradients for every requires_grad tensor reachable from the
    // scalar loss. The graph stays valid; rerunning requires a grad reset.
    void backward(const Tensor<T>& loss) {
        if (!loss || loss->numel() != 1)
            throw ContractError("backward requires a scalar loss node");
        if (!loss->requires_grad)
            throw ContractError("loss is not connected to any differentiable input");
        loss->ensure_grad();
        loss->grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output->grad.empty()) continue;
            it->backward();
        }
    }

    void clear() { nodes_.clear(); }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        const char* op;
        std::vector<Tensor<T>> inputs;
        Tensor<T> output;
        std::function<void()> backward;
    };

    std::vector<Node> nodes_;
    bool recording_ = true;
};

#ifndef NDEBUG
template <typename T>
inline void debug_check_finite(const Tensor<T>& t, const char* op) {
    if (!tensor_finite(*t))
        throw NumericError(std::string("non-finite value produced by op ") + op);
}
#else
template <typename T>
inline void debug_check_finite(const Tensor<T>&, const char*) {}
#endif

}  // namespace swinseg
