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
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace jvtoy::seq {

struct SpeakerProfile {
    int tag = 0;
    std::vector<double> embedding;
};

struct Turn {
    int speaker = 0;
    std::vector<int> text;
};

struct DialogueScript {
    std::vector<Turn> turns;
    int num_speakers = 0;

    std::size_t num_turns() const { return turns.size(); }
    std::size_t text_length() const;
    // Throws std::invalid_argument when a turn is empty or names a speaker
    // outside [0, num_speakers).
    void validate() const;
};

enum class Kind { SpkTag, SpkEmb, Text, Speech };

struct Element {
    Kind kind = Kind::Text;
    // Speaker tag for SpkTag/SpkEmb, text id for Text, speech id for Speech.
    int value = 0;

    bool operator==(const Element &) const = default;
};

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
    bool operator==(const Span &) const = default;
};

// I = [P; T; S]. P holds one SpkTag (followed by its SpkEmb when embeddings
// are on) per speaker in tag order; T holds each turn as its speaker's tag
// followed by the turn's text; S is one contiguous run of speech tokens.
struct UnifiedSequence {
    std::vector<Element> elements;
    Span p, t, s;
    bool use_spk_embeddings = true;
    std::vector<std::vector<double>> embeddings; // indexed by tag

    std::size_t size() const { return elements.size(); }
    std::size_t num_speakers() const { return embeddings.size(); }
    std::vector<int> speech_tokens() const;
    bool operator==(const UnifiedSequence &) const = default;
};

UnifiedSequence build_sequence(const std::vector<SpeakerProfile> &profiles, const DialogueScript &script,
                               const std::vector<int> &speech_tokens, bool use_spk_embeddings);

// P and T only, for sampling.
UnifiedSequence build_prefix(const std::vector<SpeakerProfile> &profiles, const DialogueScript &script,
                             bool use_spk_embeddings);

// mask[i] is true when element i + 1 lies in S, i.e. the position whose
// output predicts a speech token.
std::vector<bool> loss_mask(const UnifiedSequence &seq);

// Tagged integer stream: "G<k>" tag, "E<k>" embedding slot, "X<id>" text,
// "S<id>" speech, segments separated by "|", then one "emb <k> v..." line per
// speaker with round-trip precision.
std::string render(const UnifiedSequence &seq);
UnifiedSequence parse(std::string_view text);

// "SPK<k>: <space-separated tokens>" per line; each token must be one
// character of `alphabet` and maps to its position.
DialogueScript read_script(std::istream &in, std::string_view alphabet);
void write_script(std::ostream &out, const DialogueScript &script, std::string_view alphabet);

} // namespace jvtoy::seq
