#include "vmedit/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace vmedit {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float v, bool requires_grad) {
    for (auto e : shape)
        if (e <= 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->value.assign(static_cast<std::size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    for (auto e : shape)
        if (e <= 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(float v) {
    auto n = std::make_shared<detail::Node>();
    n->shape = {};
    n->value = {v};
    return Tensor(std::move(n));
}

std::int64_t Tensor::dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("dim index out of range");
    return node_->shape[static_cast<std::size_t>(i)];
}

void Tensor::set_requires_grad(bool v) {
    if (!node_->is_leaf) throw ContractError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = v;
}

std::span<const float> Tensor::grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient buffer");
    return node_->grad;
}

std::span<float> Tensor::grad_mut() {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item() requires a single-element tensor, shape " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::item_hi() const {
    if (numel() != 1) throw ContractError("item_hi() requires a single-element tensor");
    return node_->has_scalar_hi ? node_->scalar_hi : static_cast<double>(node_->value[0]);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

namespace detail {

Tensor make_op(const char* op, Shape shape, std::vector<float> value,
               std::vector<Tensor> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->is_leaf = false;
    if (g_grad_enabled) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || p.requires_grad();
        if (needs) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (auto& p : parents) n->parents.push_back(p.node());
            n->backprop = std::move(backprop);
        }
    }
    return Tensor::wrap(std::move(n));
}

}  // namespace detail

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward() requires a scalar loss");
    using detail::Node;
    // Iterative post-order over requires_grad nodes.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    Node* root = loss.node().get();
    if (!root->requires_grad) return;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
    // Release the tape; leaf grads stay for the optimizer.
    for (Node* n : order) {
        if (!n->is_leaf) {
            n->parents.clear();
            n->backprop = nullptr;
            n->grad.clear();
        }
    }
}

}  // namespace vmedit
