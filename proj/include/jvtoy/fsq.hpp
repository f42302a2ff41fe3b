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

#include "jvtoy/params.hpp"

#include <span>
#include <vector>

namespace jvtoy::fsq {

struct FsqConfig {
    std::vector<int> levels{5, 5, 5};
    int downsample_factor = 4;
    double beta = 1.0;

    // Throws std::invalid_argument on even/small levels, an unsupported
    // factor or a negative beta.
    void validate() const;
    std::size_t codebook_size() const;
    std::size_t dims() const { return levels.size(); }
};

struct FsqCode {
    std::vector<int> digits;
    std::size_t index = 0;
};

// Mixed radix, first dimension least significant.
std::size_t digits_to_index(std::span<const int> digits, std::span<const int> levels);
std::vector<int> index_to_digits(std::size_t index, std::span<const int> levels);

struct Quantized {
    Tensor values;  // [n, D], entries in {-1, ..., 1} on each dimension's grid
    std::vector<FsqCode> codes;
};

// Row-wise q = round(h * tanh(z)) / h with h = (L - 1) / 2. The tape sees the
// straight-through surrogate, so dq/dz = 1 - tanh(z)^2.
Quantized quantize(const Tensor &z, const FsqConfig &cfg);

// Grid value for a flat index (inverse of the digit mapping, no tape).
std::vector<double> code_values(std::size_t index, std::span<const int> levels);

struct TokenizerConfig {
    FsqConfig fsq;
    std::size_t d_in = 8;
    std::size_t width = 32;
    std::size_t n_classes = 32;
};

struct TokenizerExample {
    Tensor frames;                  // [T, d_in]
    std::vector<std::size_t> labels; // one semantic class per token window
};

struct TokenizerLoss {
    Tensor total;
    Tensor semantic;
    Tensor recon;
};

// Two strided window projections (kernel = stride) take frames down by the
// downsample factor; a linear map to the FSQ latent, then a semantic
// classification head and a frame decoder read the quantized code.
class Tokenizer {
public:
    explicit Tokenizer(TokenizerConfig cfg);

    const TokenizerConfig &config() const { return cfg_; }
    void init(ParameterStore &ps) const;

    // ceil(T / factor); the last window is padded by repeating the final frame.
    std::size_t token_count(std::size_t frames) const;

    Tensor encode_latent(const ParameterStore &ps, const Tensor &frames) const;
    Quantized encode(const ParameterStore &ps, const Tensor &frames) const;
    std::vector<std::size_t> tokenize(const ParameterStore &ps, const Tensor &frames) const;
    // [tokens * factor, d_in]
    Tensor decode(const ParameterStore &ps, const Tensor &quantized) const;

    TokenizerLoss loss(const ParameterStore &ps, const std::vector<TokenizerExample> &batch) const;

private:
    Tensor pad_frames(const Tensor &frames) const;

    TokenizerConfig cfg_;
    std::size_t s1_;
    std::size_t s2_;
};

} // namespace jvtoy::fsq
