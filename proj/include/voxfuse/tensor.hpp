#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxfuse::nn {

class NeuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad; // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    std::string name; // set for parameters only

    int64_t numel() const { return int64_t(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Reverse-mode autograd handle. Copies share the underlying node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape);
    static Tensor constant(std::vector<int> shape, std::vector<double> values);
    static Tensor scalar(double v);
    // Leaf with requires_grad set; the name keys checkpoints.
    static Tensor parameter(std::vector<int> shape, std::string name);

    bool defined() const { return node_ != nullptr; }
    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& ptr() const { return node_; }

    const std::vector<int>& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    std::vector<double>& values() const { return node_->value; }
    std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    double item() const {
        if (node_->numel() != 1)
            throw NeuralError("item() on non-scalar tensor");
        return node_->value[0];
    }

private:
    std::shared_ptr<Node> node_;
};

// Thread-local gradient recording switch.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Reverse pass from a scalar loss. Accumulates into parameter grads.
void backward(const Tensor& loss);

int64_t numel_of(const std::vector<int>& shape);

} // namespace voxfuse::nn
