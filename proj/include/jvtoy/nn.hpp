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

#include "jvtoy/ops.hpp"
#include "jvtoy/params.hpp"

#include <string>
#include <vector>

namespace jvtoy::nn {

void init_linear(ParameterStore &ps, const std::string &prefix, std::size_t in, std::size_t out, bool bias = true);
Tensor linear(const ParameterStore &ps, const std::string &prefix, const Tensor &x);

void init_norm(ParameterStore &ps, const std::string &prefix, std::size_t d);
Tensor norm(const ParameterStore &ps, const std::string &prefix, const Tensor &x);

// Keys and values of rows already processed by one attention layer.
struct LayerCache {
    Tensor k;
    Tensor v;
};

struct BlockConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
};

// Pre-LN transformer block: x + attn(ln1(x)), then + ffn(ln2(.)).
void init_block(ParameterStore &ps, const std::string &prefix, const BlockConfig &cfg);

// `mask` is [x.rows, history + x.rows]. With a cache, keys/values of x are
// appended to it and attention runs over history followed by the new rows.
Tensor block(const ParameterStore &ps, const std::string &prefix, const BlockConfig &cfg, const Tensor &x,
             const AttentionMask &mask, LayerCache *cache = nullptr);

} // namespace jvtoy::nn
