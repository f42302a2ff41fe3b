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

#include "jvtoy/evalkit.hpp"
#include "jvtoy/trainer.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace jvtoy::pipe {

struct Synthesis {
    std::vector<int> tokens; // without EOS
    bool hit_eos = false;
    Tensor frames;                // [tokens * r, d_mel]; empty when no tokens
    std::vector<int> symbols;     // inverse map of the tokens
    toy::World::Heard heard;      // listener transcription of the frames
    std::vector<int> symbol_speakers; // speaker tag per token-derived symbol, read from the frames
};

struct SynthOptions {
    am::DecodeConfig decode;
    std::size_t chunk = 8; // FM chunk size in frames
    std::size_t euler_steps = 10;
    std::uint64_t seed = 0;
};

Synthesis synthesize(const train::Models &m, const ParameterStore &ps, const std::vector<seq::SpeakerProfile> &profiles,
                     const seq::DialogueScript &script, const SynthOptions &opt);

// Per-speaker transcripts (chrono index = turn or run order) for cpCER.
std::vector<eval::SpeakerTranscript> reference_transcripts(const seq::DialogueScript &script);
std::vector<eval::SpeakerTranscript> hypothesis_transcripts(const std::vector<int> &symbols,
                                                            const std::vector<int> &speakers);

// Fraction of script turns whose majority frame-read speaker (over the symbol
// positions of the turn) is the scripted speaker.
double speaker_turn_accuracy(const seq::DialogueScript &script, const std::vector<int> &symbol_speakers);

struct PromptResult {
    std::uint64_t id = 0;
    std::size_t speakers = 0;
    double token_cer = 0.0; // inverse-mapped tokens vs script
    double frame_cer = 0.0; // listener on generated frames vs script
    double cpcer = 0.0;     // tokens + frame-read speakers
    double speaker_acc = 0.0;
    bool hit_eos = false;
};

struct EvalReport {
    std::vector<PromptResult> prompts;
    double token_cer = 0.0; // pooled: total edits / total reference symbols
    double frame_cer = 0.0;
    double cpcer = 0.0;
    double speaker_acc = 0.0; // mean over prompts
    double fm_loss = 0.0;     // teacher-forced held-out L_FM
    double am_loss = 0.0;     // teacher-forced held-out L_AM
};

// Teacher-forced held-out losses at a fixed chunk size, with noise and t
// drawn from fixed per-sample seeds so two models see identical draws.
struct HeldoutLoss {
    double l_am = 0.0;
    double l_fm = 0.0;
};
HeldoutLoss heldout_loss(const train::Models &m, const ParameterStore &ps, toy::Stage stage, std::size_t samples,
                         std::size_t chunk, std::size_t draws_per_sample = 4);

EvalReport evaluate(const train::Models &m, const ParameterStore &ps, const RunConfig &cfg);

// Held-out prompt i of the configured stage; also used by apo and sample.
toy::Sample heldout_prompt(const train::Models &m, toy::Stage stage, std::size_t i);

void write_report(std::ostream &out, const EvalReport &r);

struct NamedGradCheck {
    std::string name;
    std::size_t parameters = 0;
    GradCheckReport report;
};

// Finite-difference checks of L_AM, L_FM and the joint loss on a model small
// enough to check every coordinate. The FSQ tokenizer is left out: its
// straight-through gradient is not the derivative of the rounded forward.
std::vector<NamedGradCheck> gradcheck_suite(double tolerance);
RunConfig gradcheck_config();

} // namespace jvtoy::pipe
