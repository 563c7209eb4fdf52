#include "pointdet/tensor.hpp"

#include "pointdet/error.hpp"

#include <unordered_set>

namespace pointdet::ag {

namespace {
bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_tensor(std::vector<int> shape, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value.assign(shape_size(shape), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return node;
}

Tensor from_data(std::vector<int> shape, std::vector<double> values) {
    require(shape_size(shape) == values.size(), "tensor data does not match shape");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return node;
}

void backward(const Tensor& root) {
    require(root && root->size() == 1, "backward requires a scalar root");

    // Iterative post-order DFS; order lists ancestors before descendants.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_data()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

} // namespace pointdet::ag
