#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

// Reverse-mode autodiff over dense double tensors. Ops build the tape eagerly;
// backward() walks ancestors of the root in reverse topological order. Edges
// point upstream only, so dropping the root releases the whole tape.

namespace pointdet::ag {

class Node;
using Tensor = std::shared_ptr<Node>;

class Node {
public:
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

    size_t size() const { return value.size(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    double* data() { return value.data(); }
    const double* data() const { return value.data(); }
    double scalar() const { return value[0]; }

    // Zero-filled on first use so backward fns can always accumulate.
    double* grad_data() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad.data();
    }
    void clear_grad() { grad.clear(); }
};

inline size_t shape_size(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

Tensor make_tensor(std::vector<int> shape, bool requires_grad = false);
Tensor from_data(std::vector<int> shape, std::vector<double> values);

// Seeds the scalar root with gradient 1 and runs the tape backwards.
void backward(const Tensor& root);

// While a guard is alive, ops compute values but record no tape edges.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

} // namespace pointdet::ag
