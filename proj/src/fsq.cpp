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

#include "jvtoy/fsq.hpp"

#include "jvtoy/nn.hpp"
#include "jvtoy/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace jvtoy::fsq {

using detail::Node;

void FsqConfig::validate() const {
    if (levels.empty()) {
        throw std::invalid_argument("fsq: levels must not be empty");
    }
    for (int l : levels) {
        if (l < 3 || l % 2 == 0) {
            throw std::invalid_argument("fsq: every level must be odd and >= 3, got " + std::to_string(l));
        }
    }
    if (downsample_factor != 4 && downsample_factor != 8) {
        throw std::invalid_argument("fsq: downsample_factor must be 4 or 8, got " + std::to_string(downsample_factor));
    }
    if (!(beta >= 0.0)) {
        throw std::invalid_argument("fsq: beta must be >= 0");
    }
}

std::size_t FsqConfig::codebook_size() const {
    std::size_t n = 1;
    for (int l : levels) {
        n *= static_cast<std::size_t>(l);
    }
    return n;
}

std::size_t digits_to_index(std::span<const int> digits, std::span<const int> levels) {
    if (digits.size() != levels.size()) {
        throw ShapeError("fsq: digit count does not match level count");
    }
    std::size_t index = 0, radix = 1;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (digits[i] < 0 || digits[i] >= levels[i]) {
            throw std::out_of_range("fsq: digit " + std::to_string(digits[i]) + " outside [0, " +
                                    std::to_string(levels[i]) + ")");
        }
        index += static_cast<std::size_t>(digits[i]) * radix;
        radix *= static_cast<std::size_t>(levels[i]);
    }
    return index;
}

std::vector<int> index_to_digits(std::size_t index, std::span<const int> levels) {
    std::vector<int> digits(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const auto l = static_cast<std::size_t>(levels[i]);
        digits[i] = static_cast<int>(index % l);
        index /= l;
    }
    if (index != 0) {
        throw std::out_of_range("fsq: index outside the codebook");
    }
    return digits;
}

std::vector<double> code_values(std::size_t index, std::span<const int> levels) {
    const auto digits = index_to_digits(index, levels);
    std::vector<double> out(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const double h = (levels[i] - 1) / 2.0;
        out[i] = (digits[i] - h) / h;
    }
    return out;
}

Quantized quantize(const Tensor &z, const FsqConfig &cfg) {
    const std::size_t d = cfg.dims();
    if (z.dim() != 2 || z.cols() != d) {
        throw ShapeError("fsq: latent has shape " + shape_str(z.shape()) + ", expected [n, " + std::to_string(d) +
                         "]");
    }
    const std::size_t n = z.rows();
    auto zv = z.data();
    std::vector<double> q(n * d);
    Quantized out;
    out.codes.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        out.codes[r].digits.resize(d);
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (cfg.levels[i] - 1) / 2.0;
            const double k = std::round(h * std::tanh(zv[r * d + i]));
            q[r * d + i] = k / h;
            out.codes[r].digits[i] = static_cast<int>(k + h);
        }
        out.codes[r].index = digits_to_index(out.codes[r].digits, cfg.levels);
    }
    out.values = Tensor::make_result({n, d}, std::move(q), "fsq_quantize", {z}, [](Node &self) {
        Node &pz = *self.parents[0];
        if (!pz.requires_grad) {
            return;
        }
        auto &g = pz.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double t = std::tanh(pz.value[i]);
            g[i] += self.grad[i] * (1.0 - t * t);
        }
    });
    return out;
}

Tokenizer::Tokenizer(TokenizerConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.fsq.validate();
    s1_ = 2;
    s2_ = static_cast<std::size_t>(cfg_.fsq.downsample_factor) / 2;
}

void Tokenizer::init(ParameterStore &ps) const {
    nn::init_linear(ps, "tok.enc1", s1_ * cfg_.d_in, cfg_.width);
    nn::init_linear(ps, "tok.enc2", s2_ * cfg_.width, cfg_.width);
    nn::init_linear(ps, "tok.latent", cfg_.width, cfg_.fsq.dims());
    nn::init_linear(ps, "tok.sem", cfg_.fsq.dims(), cfg_.n_classes);
    nn::init_linear(ps, "tok.dec1", cfg_.fsq.dims(), cfg_.width);
    nn::init_linear(ps, "tok.dec2", cfg_.width, static_cast<std::size_t>(cfg_.fsq.downsample_factor) * cfg_.d_in);
}

std::size_t Tokenizer::token_count(std::size_t frames) const {
    if (frames == 0) {
        throw std::invalid_argument("tokenize: empty frame sequence");
    }
    const auto f = static_cast<std::size_t>(cfg_.fsq.downsample_factor);
    return (frames + f - 1) / f;
}

Tensor Tokenizer::pad_frames(const Tensor &frames) const {
    if (frames.dim() != 2 || frames.cols() != cfg_.d_in) {
        throw ShapeError("tokenize: frames have shape " + shape_str(frames.shape()) + ", expected [T, " +
                         std::to_string(cfg_.d_in) + "]");
    }
    const std::size_t t = frames.rows();
    const std::size_t padded = token_count(t) * static_cast<std::size_t>(cfg_.fsq.downsample_factor);
    if (padded == t) {
        return frames;
    }
    std::vector<std::size_t> rows(padded);
    for (std::size_t i = 0; i < padded; ++i) {
        rows[i] = std::min(i, t - 1);
    }
    return select_rows(frames, rows);
}

Tensor Tokenizer::encode_latent(const ParameterStore &ps, const Tensor &frames) const {
    const Tensor x = pad_frames(frames);
    const std::size_t n1 = x.rows() / s1_;
    Tensor h = gelu(nn::linear(ps, "tok.enc1", reshape(x, {n1, s1_ * cfg_.d_in})));
    h = gelu(nn::linear(ps, "tok.enc2", reshape(h, {n1 / s2_, s2_ * cfg_.width})));
    return nn::linear(ps, "tok.latent", h);
}

Quantized Tokenizer::encode(const ParameterStore &ps, const Tensor &frames) const {
    return quantize(encode_latent(ps, frames), cfg_.fsq);
}

std::vector<std::size_t> Tokenizer::tokenize(const ParameterStore &ps, const Tensor &frames) const {
    NoGradScope no_grad;
    const auto q = encode(ps, frames);
    std::vector<std::size_t> out;
    out.reserve(q.codes.size());
    for (const auto &c : q.codes) {
        out.push_back(c.index);
    }
    return out;
}

Tensor Tokenizer::decode(const ParameterStore &ps, const Tensor &quantized) const {
    const Tensor h = gelu(nn::linear(ps, "tok.dec1", quantized));
    const Tensor y = nn::linear(ps, "tok.dec2", h);
    return reshape(y, {quantized.rows() * static_cast<std::size_t>(cfg_.fsq.downsample_factor), cfg_.d_in});
}

TokenizerLoss Tokenizer::loss(const ParameterStore &ps, const std::vector<TokenizerExample> &batch) const {
    if (cfg_.fsq.beta < 0.0) {
        throw std::invalid_argument("tokenizer loss: beta must be >= 0");
    }
    if (batch.empty()) {
        throw std::invalid_argument("tokenizer loss: empty batch");
    }
    std::vector<Tensor> logits, recon, target;
    std::vector<std::size_t> labels;
    for (const auto &ex : batch) {
        const auto q = encode(ps, ex.frames);
        if (ex.labels.size() != q.codes.size()) {
            throw ShapeError("tokenizer loss: " + std::to_string(ex.labels.size()) + " labels for " +
                             std::to_string(q.codes.size()) + " tokens");
        }
        logits.push_back(nn::linear(ps, "tok.sem", q.values));
        labels.insert(labels.end(), ex.labels.begin(), ex.labels.end());
        recon.push_back(slice_rows(decode(ps, q.values), 0, ex.frames.rows()));
        target.push_back(ex.frames);
    }
    TokenizerLoss out;
    out.semantic = cross_entropy(concat_rows(logits), labels);
    out.recon = mse(concat_rows(recon), concat_rows(target));
    out.total = cfg_.fsq.beta == 0.0 ? out.semantic : add(out.semantic, scale(out.recon, cfg_.fsq.beta));
    return out;
}

} // namespace jvtoy::fsq
