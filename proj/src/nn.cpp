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

#include "jvtoy/nn.hpp"

#include <cmath>

namespace jvtoy::nn {

void init_linear(ParameterStore &ps, const std::string &prefix, std::size_t in, std::size_t out, bool bias) {
    ps.add(prefix + ".w", {in, out});
    if (bias) {
        ps.add(prefix + ".b", {out}, Init::Zeros);
    }
}

Tensor linear(const ParameterStore &ps, const std::string &prefix, const Tensor &x) {
    Tensor y = matmul(x, ps.get(prefix + ".w"));
    if (ps.contains(prefix + ".b")) {
        y = add(y, ps.get(prefix + ".b"));
    }
    return y;
}

void init_norm(ParameterStore &ps, const std::string &prefix, std::size_t d) {
    ps.add(prefix + ".g", {d}, Init::Ones);
    ps.add(prefix + ".b", {d}, Init::Zeros);
}

Tensor norm(const ParameterStore &ps, const std::string &prefix, const Tensor &x) {
    return layer_norm(x, ps.get(prefix + ".g"), ps.get(prefix + ".b"));
}

void init_block(ParameterStore &ps, const std::string &prefix, const BlockConfig &cfg) {
    if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0) {
        throw std::invalid_argument("d_model " + std::to_string(cfg.d_model) + " is not divisible by n_heads " +
                                    std::to_string(cfg.n_heads));
    }
    init_norm(ps, prefix + ".ln1", cfg.d_model);
    init_linear(ps, prefix + ".q", cfg.d_model, cfg.d_model);
    init_linear(ps, prefix + ".k", cfg.d_model, cfg.d_model);
    init_linear(ps, prefix + ".v", cfg.d_model, cfg.d_model);
    init_linear(ps, prefix + ".o", cfg.d_model, cfg.d_model);
    init_norm(ps, prefix + ".ln2", cfg.d_model);
    init_linear(ps, prefix + ".ff1", cfg.d_model, cfg.d_ff);
    init_linear(ps, prefix + ".ff2", cfg.d_ff, cfg.d_model);
}

Tensor block(const ParameterStore &ps, const std::string &prefix, const BlockConfig &cfg, const Tensor &x,
             const AttentionMask &mask, LayerCache *cache) {
    const Tensor h = norm(ps, prefix + ".ln1", x);
    const Tensor q = linear(ps, prefix + ".q", h);
    Tensor k = linear(ps, prefix + ".k", h);
    Tensor v = linear(ps, prefix + ".v", h);
    if (cache != nullptr) {
        if (cache->k.defined()) {
            k = concat_rows({cache->k, k});
            v = concat_rows({cache->v, v});
        }
        cache->k = k;
        cache->v = v;
    }
    if (mask.rows() != x.rows() || mask.cols() != k.rows()) {
        throw ShapeError("attention mask is " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                         ", expected " + std::to_string(x.rows()) + "x" + std::to_string(k.rows()));
    }
    const std::vector<double> additive = mask.additive();
    const std::size_t dh = cfg.d_model / cfg.n_heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
        const Tensor qh = slice_cols(q, hd * dh, dh);
        const Tensor kh = slice_cols(k, hd * dh, dh);
        const Tensor vh = slice_cols(v, hd * dh, dh);
        const Tensor p = softmax_masked(scale(matmul(qh, transpose(kh)), inv), additive);
        heads.push_back(matmul(p, vh));
    }
    Tensor y = add(x, linear(ps, prefix + ".o", cfg.n_heads == 1 ? heads[0] : concat_cols(heads)));
    const Tensor f = linear(ps, prefix + ".ff2", gelu(linear(ps, prefix + ".ff1", norm(ps, prefix + ".ln2", y))));
    return add(y, f);
}

} // namespace jvtoy::nn
