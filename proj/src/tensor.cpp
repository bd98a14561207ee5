#include "voxfuse/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace voxfuse::nn {

int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
    auto n = std::make_shared<Node>();
    n->value.assign(size_t(numel_of(shape)), 0.0);
    n->shape = std::move(shape);
    return Tensor(n);
}

Tensor Tensor::constant(std::vector<int> shape, std::vector<double> values) {
    if (int64_t(values.size()) != numel_of(shape))
        throw NeuralError("constant: value count does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(n);
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(std::vector<int> shape, std::string name) {
    Tensor t = zeros(std::move(shape));
    t.node().requires_grad = true;
    t.node().name = std::move(name);
    return t;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw NeuralError("backward: loss must be a defined scalar");
    Node* root = &loss.node();
    if (!root->requires_grad || (!root->backward_fn && root->parents.empty() && root->name.empty()))
        throw NeuralError("backward: no recorded graph attached to the loss");

    // post-order DFS, iterative to tolerate deep chains
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward_fn) continue;
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
        n->backward_fn(*n);
    }
}

} // namespace voxfuse::nn
