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

#include "jvtoy/sequence.hpp"
#include "jvtoy/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace jvtoy::toy {

inline constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz012345";

// A text symbol x is spoken as 8 frames: four onset frames set by its
// consonant x % 8 and four coda frames set by its vowel x / 8 shifted by a
// coarticulation bit (the parity of the next symbol's consonant). Each
// speaker adds a constant offset derived from their embedding.
struct WorldConfig {
    std::uint64_t seed = 1;
    std::size_t text_vocab = 32;
    std::size_t d_mel = 8;
    std::size_t d_spk = 16;
    int downsample_factor = 4;     // 4: two tokens per symbol, 8: one
    std::size_t codebook_size = 125;
    double noise_std = 0.05;
    double offset_scale = 0.6;
    std::size_t max_speakers = 8;
    std::size_t max_turns = 8;
    // stage 1: one speaker, one short turn
    std::size_t stage1_min_len = 3;
    std::size_t stage1_max_len = 8;
    // stage 2: turn lengths and speaker-count weights (index 0 is one speaker)
    std::size_t stage2_min_turn = 2;
    std::size_t stage2_max_turn = 5;
    std::vector<double> speaker_weights{0.30, 0.25, 0.15, 0.10, 0.08, 0.05, 0.04, 0.03};

    void validate() const;
    std::size_t tokens_per_symbol() const { return 8 / static_cast<std::size_t>(downsample_factor); }
    std::size_t frames_per_token() const { return static_cast<std::size_t>(downsample_factor); }
    std::size_t speech_vocab() const { return codebook_size + 1; }
    int eos() const { return static_cast<int>(codebook_size); }
};

inline constexpr std::size_t kFramesPerSymbol = 8;

struct Sample {
    std::uint64_t id = 0;
    seq::DialogueScript script;
    std::vector<seq::SpeakerProfile> profiles;
    std::vector<int> tokens; // ground truth, without EOS
    Tensor frames;           // [symbols * 8, d_mel]
};

enum class Stage { One, Two };
enum class Split { Train, Heldout };

class World {
public:
    explicit World(WorldConfig cfg);

    const WorldConfig &config() const { return cfg_; }

    // Deterministic in (world seed, stage, split, index).
    Sample sample(Stage stage, Split split, std::uint64_t index) const;
    // A specific script with fresh speakers drawn from `speaker_seed`.
    Sample render(const seq::DialogueScript &script, std::uint64_t speaker_seed, bool noisy = true) const;
    std::vector<seq::SpeakerProfile> draw_profiles(std::size_t n, std::uint64_t speaker_seed) const;
    seq::DialogueScript draw_script(std::size_t speakers, std::size_t turns, std::uint64_t seed) const;

    // Ideal semantic tokenizer and its inverse.
    std::vector<int> tokens_for(const std::vector<int> &symbols) const;
    std::vector<int> symbols_from_tokens(const std::vector<int> &tokens) const;

    std::vector<double> speaker_offset(const std::vector<double> &embedding) const;
    Tensor frames_for(const std::vector<int> &symbols, const std::vector<int> &speaker_of_symbol,
                      const std::vector<seq::SpeakerProfile> &profiles, std::uint64_t noise_seed, bool noisy) const;

    struct Heard {
        std::vector<int> symbols;
        std::vector<int> speakers; // tag of the best-matching cast member per symbol block
    };
    // Toy listener: decodes 8-frame blocks by nearest pattern jointly over the cast.
    Heard listen(const Tensor &frames, const std::vector<seq::SpeakerProfile> &cast) const;

private:
    WorldConfig cfg_;
    std::vector<double> onset_; // [8][4][d_mel]
    std::vector<double> coda_;  // [6][4][d_mel]
    std::vector<double> proj_;  // [d_mel][d_spk]
};

// Flattened text of a script and the speaker of every symbol.
std::vector<int> script_symbols(const seq::DialogueScript &script);
std::vector<int> script_speakers(const seq::DialogueScript &script);
std::string symbols_text(const std::vector<int> &symbols);

} // namespace jvtoy::toy
