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

#include "jvtoy/flowmatch.hpp"

#include <cmath>
#include <stdexcept>

namespace jvtoy::fm {

namespace {

std::string layer_name(std::size_t l) { return "fm.block" + std::to_string(l); }

} // namespace

AttentionMask make_chunk_mask(std::size_t frames, std::size_t chunk) {
    if (frames == 0 || chunk == 0) {
        throw std::invalid_argument("chunk mask needs frames >= 1 and chunk >= 1");
    }
    AttentionMask m(frames, frames, false);
    for (std::size_t i = 0; i < frames; ++i) {
        const std::size_t visible = std::min(frames, (i / chunk + 1) * chunk);
        for (std::size_t j = 0; j < visible; ++j) {
            m.set(i, j, true);
        }
    }
    return m;
}

Tensor interpolate(const Tensor &x0, const Tensor &x1, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("interpolate: t must lie in [0, 1]");
    }
    if (x0.shape() != x1.shape()) {
        throw ShapeError("interpolate: shape mismatch " + shape_str(x0.shape()) + " vs " + shape_str(x1.shape()));
    }
    return add(scale(x0, 1.0 - t), scale(x1, t));
}

std::vector<double> time_embedding(double t, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<double> out(dim, 0.0);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out[i] = std::sin(1000.0 * t * freq);
        out[half + i] = std::cos(1000.0 * t * freq);
    }
    return out;
}

void FlowConfig::validate() const {
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw std::invalid_argument("fm: d_model must be divisible by n_heads");
    }
    if (euler_steps == 0) {
        throw std::invalid_argument("fm: euler_steps must be >= 1");
    }
    if (frames_per_token == 0 || time_dim == 0 || time_dim % 2 != 0) {
        throw std::invalid_argument("fm: frames_per_token must be positive and time_dim even");
    }
    if (chunk_choices.empty()) {
        throw std::invalid_argument("fm: chunk_choices must not be empty");
    }
}

FlowModel::FlowModel(FlowConfig cfg) : cfg_(std::move(cfg)), block_{cfg_.d_model, cfg_.n_heads, cfg_.d_ff} {
    cfg_.validate();
}

void FlowModel::init(ParameterStore &ps) const {
    nn::init_linear(ps, "fm.in", cfg_.d_mel, cfg_.d_model);
    nn::init_linear(ps, "fm.cond", cfg_.d_cond, cfg_.d_model);
    nn::init_linear(ps, "fm.time", cfg_.time_dim, cfg_.d_model);
    ps.add("fm.phase_emb", {cfg_.frames_per_token, cfg_.d_model});
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        nn::init_block(ps, layer_name(l), block_);
    }
    nn::init_norm(ps, "fm.ln_f", cfg_.d_model);
    nn::init_linear(ps, "fm.out", cfg_.d_model, cfg_.d_mel);
}

Tensor FlowModel::upsample(const Tensor &h) const { return repeat_rows(h, cfg_.frames_per_token); }

Tensor FlowModel::input_rows(const ParameterStore &ps, const Tensor &x_t, const std::vector<double> &t,
                             const Tensor &cond, std::size_t first_row) const {
    const std::size_t n = x_t.rows();
    if (x_t.dim() != 2 || x_t.cols() != cfg_.d_mel) {
        throw ShapeError("fm: x_t has shape " + shape_str(x_t.shape()) + ", expected [T, " +
                         std::to_string(cfg_.d_mel) + "]");
    }
    if (cond.dim() != 2 || cond.rows() != n || cond.cols() != cfg_.d_cond) {
        throw ShapeError("fm: conditioning has shape " + shape_str(cond.shape()) + ", expected [" +
                         std::to_string(n) + ", " + std::to_string(cfg_.d_cond) + "]");
    }
    if (t.size() != 1 && t.size() != n) {
        throw ShapeError("fm: need one time value or one per row");
    }
    std::vector<double> temb;
    temb.reserve(n * cfg_.time_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double ti = t.size() == 1 ? t[0] : t[i];
        if (!(ti >= 0.0 && ti <= 1.0)) {
            throw std::invalid_argument("fm: t must lie in [0, 1]");
        }
        const auto e = time_embedding(ti, cfg_.time_dim);
        temb.insert(temb.end(), e.begin(), e.end());
    }
    std::vector<std::size_t> phase(n);
    for (std::size_t i = 0; i < n; ++i) {
        phase[i] = (first_row + i) % cfg_.frames_per_token;
    }
    Tensor x = add(nn::linear(ps, "fm.in", x_t), nn::linear(ps, "fm.cond", cond));
    x = add(x, nn::linear(ps, "fm.time", Tensor::from({n, cfg_.time_dim}, std::move(temb))));
    return add(x, embedding_lookup(ps.get("fm.phase_emb"), phase));
}

Tensor FlowModel::forward(const ParameterStore &ps, const Tensor &x_t, const std::vector<double> &t,
                          const Tensor &cond, const AttentionMask &mask) const {
    Tensor x = input_rows(ps, x_t, t, cond, 0);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        x = nn::block(ps, layer_name(l), block_, x, mask);
    }
    return nn::linear(ps, "fm.out", nn::norm(ps, "fm.ln_f", x));
}

Tensor FlowModel::forward_stream(const ParameterStore &ps, const Tensor &x_t, const std::vector<double> &t,
                                 const Tensor &cond, std::size_t chunk, StreamState &state) const {
    if (state.layers.empty()) {
        state.layers.resize(cfg_.n_layers);
    }
    const std::size_t first = state.rows;
    const std::size_t n = x_t.rows();
    AttentionMask mask(n, first + n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t row = first + i;
        const std::size_t visible = std::min(first + n, (row / chunk + 1) * chunk);
        for (std::size_t j = 0; j < visible; ++j) {
            mask.set(i, j, true);
        }
    }
    Tensor x = input_rows(ps, x_t, t, cond, first);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        x = nn::block(ps, layer_name(l), block_, x, mask, &state.layers[l]);
    }
    state.rows += n;
    return nn::linear(ps, "fm.out", nn::norm(ps, "fm.ln_f", x));
}

Tensor FlowModel::loss(const ParameterStore &ps, const Tensor &x1, const Tensor &h, const AttentionMask &mask,
                       Rng &rng) const {
    const Tensor cond = upsample(h);
    if (cond.rows() != x1.rows()) {
        throw ShapeError("fm: " + std::to_string(h.rows()) + " conditioning rows upsample to " +
                         std::to_string(cond.rows()) + " frames, but x1 has " + std::to_string(x1.rows()));
    }
    std::vector<double> x0v(x1.numel());
    for (auto &v : x0v) {
        v = rng.normal();
    }
    const double t = rng.uniform();
    const Tensor x0 = Tensor::from(x1.shape(), std::move(x0v));
    const Tensor x1c = stop_gradient(x1);
    const Tensor xt = interpolate(x0, x1c, t);
    const Tensor v = forward(ps, xt, {t}, cond, mask);
    return mse(v, sub(x1c, x0));
}

Tensor FlowModel::noise(std::size_t frames, std::uint64_t seed) const {
    Rng rng(mix_seed(seed, 0x464d4e4f495345ULL));
    std::vector<double> v(frames * cfg_.d_mel);
    for (auto &x : v) {
        x = rng.normal();
    }
    return Tensor::from({frames, cfg_.d_mel}, std::move(v));
}

namespace {

void euler_update(std::vector<double> &x, std::span<const double> v, double dt) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] += dt * v[i];
        if (!std::isfinite(x[i])) {
            throw NumericError("fm: non-finite state during Euler integration");
        }
    }
    finalize_values(x, "euler");
}

} // namespace

Tensor FlowModel::sample(const ParameterStore &ps, const Tensor &h, const AttentionMask &mask, std::size_t steps,
                         std::uint64_t seed) const {
    if (steps == 0) {
        throw std::invalid_argument("fm: steps must be >= 1");
    }
    NoGradScope no_grad;
    const Tensor cond = upsample(h);
    const std::size_t frames = cond.rows();
    const Tensor x0 = noise(frames, seed);
    std::vector<double> x(x0.data().begin(), x0.data().end());
    const double dt = 1.0 / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        const Tensor v = forward(ps, Tensor::from({frames, cfg_.d_mel}, x), {t}, cond, mask);
        euler_update(x, v.data(), dt);
    }
    return Tensor::from({frames, cfg_.d_mel}, std::move(x));
}

Tensor FlowModel::sample_streaming(const ParameterStore &ps, const Tensor &h, std::size_t chunk, std::size_t steps,
                                   std::uint64_t seed) const {
    if (steps == 0 || chunk == 0) {
        throw std::invalid_argument("fm: steps and chunk must be >= 1");
    }
    NoGradScope no_grad;
    const Tensor cond = upsample(h);
    const std::size_t frames = cond.rows();
    const Tensor x0 = noise(frames, seed);
    std::vector<StreamState> per_step(steps);
    std::vector<double> out;
    out.reserve(frames * cfg_.d_mel);
    const double dt = 1.0 / static_cast<double>(steps);
    for (std::size_t start = 0; start < frames; start += chunk) {
        const std::size_t n = std::min(chunk, frames - start);
        const Tensor c = slice_rows(cond, start, n);
        const Tensor xs = slice_rows(x0, start, n);
        std::vector<double> x(xs.data().begin(), xs.data().end());
        for (std::size_t k = 0; k < steps; ++k) {
            const double t = static_cast<double>(k) / static_cast<double>(steps);
            const Tensor v = forward_stream(ps, Tensor::from({n, cfg_.d_mel}, x), {t}, c, chunk, per_step[k]);
            euler_update(x, v.data(), dt);
        }
        out.insert(out.end(), x.begin(), x.end());
    }
    return Tensor::from({frames, cfg_.d_mel}, std::move(out));
}

std::size_t FlowModel::draw_chunk(std::size_t frames, Rng &rng) const {
    const std::size_t c = cfg_.chunk_choices[rng.uniform_int(cfg_.chunk_choices.size())];
    return c == 0 ? frames : std::min(c, frames);
}

} // namespace jvtoy::fm
