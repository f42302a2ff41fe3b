// Copyright 2026 The jvtoy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "jvtoy/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace jvtoy {

namespace {

thread_local bool t_float64 = false;
thread_local bool t_grad_enabled = true;

} // namespace

std::size_t shape_numel(const Shape &shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Float64Scope::Float64Scope() : prev_(t_float64) { t_float64 = true; }
Float64Scope::~Float64Scope() { t_float64 = prev_; }

NoGradScope::NoGradScope() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradScope::~NoGradScope() { t_grad_enabled = prev_; }

bool float64_mode() { return t_float64; }
bool grad_enabled() { return t_grad_enabled; }

void finalize_values(std::vector<double> &values, const char *op) {
    const bool round = !t_float64;
    for (double &v : values) {
        if (round) {
            v = static_cast<double>(static_cast<float>(v));
        }
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

std::vector<double> &detail::Node::ensure_grad() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    finalize_values(node->value, "tensor construction");
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape &Tensor::shape() const {
    static const Shape empty;
    return node_ ? node_->shape : empty;
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::size_t Tensor::rows() const {
    const auto &s = shape();
    if (s.size() != 2) {
        throw ShapeError("rows() requires a 2-D tensor, got " + shape_str(s));
    }
    return s[0];
}

std::size_t Tensor::cols() const {
    const auto &s = shape();
    if (s.size() != 2) {
        throw ShapeError("cols() requires a 2-D tensor, got " + shape_str(s));
    }
    return s[1];
}

std::span<const double> Tensor::data() const {
    if (!node_) {
        return {};
    }
    return node_->value;
}

std::span<double> Tensor::mutable_data() {
    if (!node_) {
        return {};
    }
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    }
    return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!node_->is_leaf) {
        throw std::logic_error("requires_grad can only be toggled on leaf tensors");
    }
    node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return !node_ || node_->is_leaf; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) {
        return {};
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) {
        node_->grad.assign(node_->value.size(), 0.0);
    }
}

Tensor Tensor::clone() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->value = node_->value;
    node->requires_grad = node_->requires_grad && node_->is_leaf;
    return Tensor(std::move(node));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, const char *op, std::vector<Tensor> parents,
                           std::function<void(detail::Node &)> backward) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError(std::string(op) + ": result length does not match shape " + shape_str(shape));
    }
    finalize_values(values, op);
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    bool any = false;
    for (const auto &p : parents) {
        any = any || p.requires_grad();
    }
    if (any && t_grad_enabled && backward) {
        node->requires_grad = true;
        node->is_leaf = false;
        node->parents.reserve(parents.size());
        for (auto &p : parents) {
            node->parents.push_back(p.node_);
        }
        node->backward_fn = std::move(backward);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor &loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw std::logic_error("backward called on a loss that is not on the gradient tape");
    }

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::Node *> order;
    std::unordered_set<detail::Node *> visited;
    std::vector<std::pair<detail::Node *, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node *p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto *node : order) {
        if (!node->is_leaf) {
            node->grad.assign(node->value.size(), 0.0);
        } else {
            node->ensure_grad();
        }
    }
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node *node = *it;
        if (!node->is_leaf && node->backward_fn) {
            node->backward_fn(*node);
        }
    }
}

} // namespace jvtoy
