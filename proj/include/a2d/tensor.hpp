#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "a2d/error.hpp"

namespace a2d {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One node of the recorded computation graph. `op` identifies the operation,
// `inputs` are the tensors it was computed from, and `backprop` holds the
// saved intermediates needed to push this node's grad into its inputs.
// The graph is a DAG; leaves have no inputs.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed; same length as value once allocated
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void()> backprop;

    std::size_t size() const { return value.size(); }
    // Allocates (zeroed) grad storage on first use.
    std::vector<double>& grad_buffer();
};

// Value-semantics handle to a TensorNode. Copying a Tensor aliases the node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    // Samples i.i.d. normal(0, stddev) entries; used for parameter init.
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad = false);

    // Fresh node produced by an op; value sized to the shape, zero-filled.
    static Tensor make(Shape shape, const char* op, std::vector<Tensor> inputs);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t rank() const { return node_->shape.size(); }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<double>& grad() { return node_->grad_buffer(); }
    const std::vector<double>& grad_view() const { return node_->grad; }
    void zero_grad();

    // Value copy detached from the graph.
    Tensor detached() const;

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& handle() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;
};

// Reverse-mode sweep from a scalar loss. Accumulates dL/dθ into the grad of
// every reachable tensor with requires_grad; repeated calls without zeroing
// accumulate further. Throws ConfigError if `loss` is not scalar.
void backward(const Tensor& loss);

// While alive on a thread, ops compute values only: no graph is recorded and
// outputs do not require grad.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

}  // namespace a2d
