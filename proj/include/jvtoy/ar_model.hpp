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
#include "jvtoy/sequence.hpp"

#include <cstdint>
#include <vector>

namespace jvtoy::am {

struct ArConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t text_vocab = 32;
    std::size_t speech_vocab = 126; // codebook + EOS (last id)
    std::size_t max_speakers = 8;
    std::size_t d_spk = 16;
    std::size_t max_len = 512;
    std::size_t max_positions = 256;
    // Speech tokens per text symbol; speech position ids advance once per symbol.
    std::size_t tokens_per_symbol = 1;
    bool use_spk_embeddings = true;

    int eos() const { return static_cast<int>(speech_vocab) - 1; }
    void validate() const;
};

struct AmOutput {
    Tensor logits; // [|S|, speech_vocab], row t predicts s_t
    Tensor hidden; // [|S|, d_model], final-layer states at the same positions
};

struct DecodeConfig {
    double temperature = 1.0;
    std::size_t top_k = 0; // 0 keeps the full vocabulary
    std::uint64_t seed = 0;
    std::size_t max_tokens = 0; // 0 means 4x the expected length
};

struct SampleResult {
    std::vector<int> tokens; // without EOS
    Tensor hidden;           // [tokens.size(), d_model], rows predicting each kept token
    bool hit_eos = false;
    bool capped = false;     // stopped at the cap without EOS
};

class ArModel {
public:
    explicit ArModel(ArConfig cfg);

    const ArConfig &config() const { return cfg_; }
    void init(ParameterStore &ps) const;

    // Position id and segment id per element.
    std::vector<std::size_t> position_ids(const seq::UnifiedSequence &seq) const;
    std::vector<std::size_t> segment_ids(const seq::UnifiedSequence &seq) const;

    // Final-layer states for every element: [n, d_model].
    Tensor states(const ParameterStore &ps, const seq::UnifiedSequence &seq) const;
    AmOutput forward(const ParameterStore &ps, const seq::UnifiedSequence &seq) const;

    SampleResult sample(const ParameterStore &ps, const seq::UnifiedSequence &prefix, const DecodeConfig &dc) const;

private:
    Tensor embed(const ParameterStore &ps, const seq::UnifiedSequence &seq, std::size_t begin, std::size_t end) const;
    Tensor head_logits(const ParameterStore &ps, const Tensor &hidden) const;

    ArConfig cfg_;
    nn::BlockConfig block_;
};

// Mean cross-entropy over rows with mask true; throws if no row is selected.
Tensor am_loss(const Tensor &logits, const std::vector<int> &targets, const std::vector<bool> &mask);

// Tokens the AM is expected to emit for a prefix (text symbols x tokens per symbol).
std::size_t expected_tokens(const seq::UnifiedSequence &prefix, std::size_t tokens_per_symbol);

} // namespace jvtoy::am
