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

#include "jvtoy/nn.hpp"
#include "jvtoy/params.hpp"
#include "jvtoy/rng.hpp"

#include <cstdint>
#include <vector>

namespace jvtoy::fm {

// mask(i, j) = floor(j / c) <= floor(i / c).
AttentionMask make_chunk_mask(std::size_t frames, std::size_t chunk);

// (1 - t) x0 + t x1; throws for t outside [0, 1].
Tensor interpolate(const Tensor &x0, const Tensor &x1, double t);

// Sinusoidal embedding of t in [0, 1] (scaled by 1000), half sine, half cosine.
std::vector<double> time_embedding(double t, std::size_t dim);

struct FlowConfig {
    std::size_t d_mel = 8;
    std::size_t d_cond = 64;
    std::size_t d_model = 48;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 96;
    std::size_t time_dim = 32;
    std::size_t frames_per_token = 8;
    std::size_t euler_steps = 10;
    // Training chunk sizes drawn uniformly; 0 stands for "whole sequence".
    std::vector<std::size_t> chunk_choices{1, 2, 4, 8, 0};

    void validate() const;
};

// Rows needed for streaming: keys/values of all earlier frames per layer.
struct StreamState {
    std::vector<nn::LayerCache> layers;
    std::size_t rows = 0;
};

class FlowModel {
public:
    explicit FlowModel(FlowConfig cfg);

    const FlowConfig &config() const { return cfg_; }
    void init(ParameterStore &ps) const;

    // Repeat each conditioning row frames_per_token times.
    Tensor upsample(const Tensor &h) const;

    // x_t [T, d_mel], t per row (or one value for all rows), cond [T, d_cond]
    // already upsampled. Returns v [T, d_mel].
    Tensor forward(const ParameterStore &ps, const Tensor &x_t, const std::vector<double> &t, const Tensor &cond,
                   const AttentionMask &mask) const;

    // Processes the next rows of a sequence given the cached history. With a
    // chunk-aligned split this equals the masked one-shot forward exactly.
    Tensor forward_stream(const ParameterStore &ps, const Tensor &x_t, const std::vector<double> &t,
                          const Tensor &cond, std::size_t chunk, StreamState &state) const;

    // mean |v(x_t, t, h) - (x1 - x0)|^2 with x0 ~ N(0, I) and t ~ U(0, 1)
    // drawn from rng; h is token-rate and gets upsampled here.
    Tensor loss(const ParameterStore &ps, const Tensor &x1, const Tensor &h, const AttentionMask &mask, Rng &rng) const;

    // Euler integration from N(0, I) over `steps` uniform steps.
    Tensor sample(const ParameterStore &ps, const Tensor &h, const AttentionMask &mask, std::size_t steps,
                  std::uint64_t seed) const;
    // Same trajectory computed chunk by chunk with cached history.
    Tensor sample_streaming(const ParameterStore &ps, const Tensor &h, std::size_t chunk, std::size_t steps,
                            std::uint64_t seed) const;

    // Draws a training chunk size from chunk_choices for a sequence of `frames` rows.
    std::size_t draw_chunk(std::size_t frames, Rng &rng) const;

private:
    Tensor input_rows(const ParameterStore &ps, const Tensor &x_t, const std::vector<double> &t, const Tensor &cond,
                      std::size_t first_row) const;
    Tensor noise(std::size_t frames, std::uint64_t seed) const;

    FlowConfig cfg_;
    nn::BlockConfig block_;
};

} // namespace jvtoy::fm
