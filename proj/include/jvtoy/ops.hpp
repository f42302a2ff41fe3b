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

#include "jvtoy/tensor.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace jvtoy {

// Boolean visibility matrix: allowed(i, j) means query row i may attend to key column j.
class AttentionMask {
public:
    AttentionMask() = default;
    AttentionMask(std::size_t rows, std::size_t cols, bool fill);

    static AttentionMask causal(std::size_t n);
    static AttentionMask full(std::size_t n) { return AttentionMask(n, n, true); }
    static AttentionMask diagonal(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool allowed(std::size_t i, std::size_t j) const { return bits_[i * cols_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool on) { bits_[i * cols_ + j] = on ? 1 : 0; }

    // 0 where allowed, -inf where blocked.
    std::vector<double> additive() const;

    bool operator==(const AttentionMask &) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> bits_;
};

inline constexpr double kBlocked = -std::numeric_limits<double>::infinity();

Tensor matmul(const Tensor &a, const Tensor &b);
Tensor transpose(const Tensor &a);

// Elementwise; b may also be a row vector ([n] or [1,n]) broadcast across the rows of a.
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double s);
Tensor add_scalar(const Tensor &a, double s);
Tensor neg(const Tensor &a);

Tensor sum(const Tensor &a);
Tensor mean(const Tensor &a);

Tensor layer_norm(const Tensor &x, const Tensor &gain, const Tensor &bias, double eps = 1e-5);
Tensor gelu(const Tensor &x);
Tensor tanh(const Tensor &x);
Tensor log_sigmoid(const Tensor &x);

// Row-wise softmax of scores + additive_mask. Entries equal to -inf are
// excluded exactly (probability 0, no arithmetic contribution).
Tensor softmax_masked(const Tensor &scores, std::span<const double> additive_mask);
Tensor log_softmax(const Tensor &x);

Tensor embedding_lookup(const Tensor &table, std::span<const std::size_t> ids);

enum class Reduction { Mean, Sum };

// Cross-entropy of row-wise logits against integer targets; rows with
// row_mask[i] == false are skipped. An empty row_mask selects every row.
Tensor cross_entropy(const Tensor &logits, std::span<const std::size_t> targets,
                     const std::vector<bool> &row_mask = {}, Reduction reduction = Reduction::Mean);
Tensor mse(const Tensor &prediction, const Tensor &target);

Tensor concat_rows(const std::vector<Tensor> &parts);
Tensor concat_cols(const std::vector<Tensor> &parts);
Tensor slice_rows(const Tensor &a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor &a, std::size_t start, std::size_t count);
Tensor select_rows(const Tensor &a, std::span<const std::size_t> rows);
Tensor repeat_rows(const Tensor &a, std::size_t times);
Tensor reshape(const Tensor &a, Shape shape);
Tensor stop_gradient(const Tensor &a);

} // namespace jvtoy
