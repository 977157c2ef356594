#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vmedit/errors.hpp"

namespace vmedit {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> value;
    bool requires_grad = false;  // true if a gradient must flow to or through this node
    bool is_leaf = true;
    std::vector<float> grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // pulls node.grad into parents' grads
    const char* op = "";
    // Scalar reductions keep their double-precision accumulation here so
    // finite-difference checks are not limited by the final float cast.
    double scalar_hi = 0.0;
    bool has_scalar_hi = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

}  // namespace detail

// Dense float32 tensor participating in a reverse-mode tape. Values are
// immutable once the tensor has been consumed by an op; grad buffers are
// the only mutable state afterwards.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
    std::int64_t dim(int i) const;

    std::span<const float> data() const { return node_->value; }
    // Mutable value access; only valid before the tensor enters a graph.
    std::span<float> raw() { return node_->value; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v);

    bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
    std::span<const float> grad() const;
    std::span<float> grad_mut();
    void zero_grad();

    float item() const;
    // item(), but at the reduction's double precision when available.
    double item_hi() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
};

// Accumulates gradients of `loss` (a scalar) into every requires_grad leaf
// that participated in its computation, then releases the tape.
void backward(const Tensor& loss);

// While alive, ops do not record the tape and results carry no grad.
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

namespace detail {

// Builds an op node; drops the tape when grads are disabled or no parent needs them.
Tensor make_op(const char* op, Shape shape, std::vector<float> value,
               std::vector<Tensor> parents, std::function<void(Node&)> backprop);

}  // namespace detail

}  // namespace vmedit
