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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jvtoy {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

// Values are held in a double buffer but every op output is rounded to the
// nearest float32, so observable arithmetic is 32-bit. Float64Scope lifts the
// rounding for the current thread; the finite-difference oracle runs inside it.
class Float64Scope {
public:
    Float64Scope();
    ~Float64Scope();
    Float64Scope(const Float64Scope &) = delete;
    Float64Scope &operator=(const Float64Scope &) = delete;

private:
    bool prev_;
};

// Ops evaluated under NoGradScope are never recorded on the tape.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope &) = delete;
    NoGradScope &operator=(const NoGradScope &) = delete;

private:
    bool prev_;
};

bool float64_mode();
bool grad_enabled();

// Rounds in place to float32 unless Float64Scope is active, then checks finiteness.
void finalize_values(std::vector<double> &values, const char *op);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node &)> backward_fn;

    std::vector<double> &ensure_grad();
};

} // namespace detail

// Dense row-major tensor handle. Copies share storage and tape identity; use
// clone() for an independent buffer.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape &shape() const;
    std::size_t dim() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    // Direct write access; only meaningful for leaves (parameters, inputs).
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool is_leaf() const;
    bool on_tape() const { return requires_grad(); }

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    Tensor clone() const;
    bool same_node(const Tensor &other) const { return node_ == other.node_; }

    // Builds a tape node from parents. backward receives the output node; its
    // grad is populated, and it accumulates into the parents' grads.
    static Tensor make_result(Shape shape, std::vector<double> values, const char *op,
                              std::vector<Tensor> parents,
                              std::function<void(detail::Node &)> backward);

    const std::shared_ptr<detail::Node> &node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// calls until zeroed; intermediate gradients are recomputed each call.
void backward(const Tensor &loss);

} // namespace jvtoy
