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

#include "jvtoy/ar_model.hpp"
#include "jvtoy/trainer.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace jvtoy::pref {

struct Prompt {
    std::string id;
    std::vector<seq::SpeakerProfile> profiles;
    seq::DialogueScript script;
};

// Sum of log-probabilities of `tokens` under teacher forcing after the
// prompt's P and T segments. No EOS requirement; the building block.
Tensor logprob_of(const am::ArModel &model, const ParameterStore &ps, const Prompt &prompt,
                      const std::vector<int> &tokens);

// log pi(y|x) summed over the speech positions; y must end with EOS.
Tensor seq_logprob(const am::ArModel &model, const ParameterStore &ps, const Prompt &prompt,
                   const std::vector<int> &tokens);

struct PairLogprobs {
    Tensor policy_chosen;   // scalar, on the tape
    Tensor policy_rejected; // scalar, on the tape
    double ref_chosen = 0.0;
    double ref_rejected = 0.0;
};

// Mean over pairs of -log sigmoid(beta * [(pc - rc) - (pr - rr)]).
Tensor dpo_loss(const std::vector<PairLogprobs> &pairs, double beta);

struct PreferencePair {
    std::string prompt_id;
    std::vector<int> chosen;   // without EOS
    std::vector<int> rejected; // without EOS
};

struct PairBuild {
    std::vector<PreferencePair> pairs;
    std::size_t unique = 0;   // distinct candidates after deduplication
    std::size_t chosen = 0;   // distinct candidates with CER 0
    std::size_t rejected = 0; // distinct candidates with CER > 0
    std::size_t product = 0;  // chosen * rejected, before any cap
    bool skipped = false;     // no pairs: one of the sets is empty
};

// Identical token sequences are collapsed first. Pairs = chosen x rejected in
// candidate order; with max_pairs > 0 a larger product is subsampled
// uniformly without replacement (seeded), keeping the product order.
PairBuild apo_build_pairs(const std::string &prompt_id, const std::vector<std::vector<int>> &candidates,
                          const std::vector<double> &cers, std::size_t max_pairs, std::uint64_t seed);

// CER of a token sequence through the toy inverse map.
double candidate_cer(const toy::World &world, const std::vector<int> &tokens, const seq::DialogueScript &script);

struct ApoConfig {
    std::size_t n = 8;
    double temperature = 1.0;
    std::size_t top_k = 0;
    std::size_t max_pairs = 16;
    std::size_t prompts = 64;
    toy::Stage stage = toy::Stage::One;
    std::uint64_t seed = 1;

    static ApoConfig from(const RunConfig &cfg);
};

struct ApoPromptStats {
    std::string prompt_id;
    std::size_t unique = 0;
    std::size_t chosen = 0;
    std::size_t rejected = 0;
    std::size_t pairs = 0;
};

struct ApoRound {
    std::vector<PreferencePair> pairs;
    std::vector<ApoPromptStats> stats;
    double yield = 0.0; // fraction of prompts with at least one pair
};

// APO prompts come from a dedicated training-split stream, disjoint from the
// held-out evaluation prompts. Ids look like "s1-<index>".
Prompt apo_prompt(const toy::World &world, toy::Stage stage, std::uint64_t index);
Prompt prompt_from_id(const toy::World &world, const std::string &id);

ApoRound apo_round(const train::Models &m, const ParameterStore &ps, const ApoConfig &cfg);

void write_pairs(std::ostream &out, const std::vector<PreferencePair> &pairs);
std::vector<PreferencePair> read_pairs(std::istream &in);

struct DpoConfig {
    double beta = 0.1;
    double lr = 2e-4;
    std::size_t epochs = 1;
    std::size_t batch_pairs = 8;
    std::uint64_t seed = 1;

    static DpoConfig from(const RunConfig &cfg);
};

struct DpoStep {
    std::size_t step = 0;
    double loss = 0.0;
    double margin = 0.0; // mean calibrated margin of the batch
};

// One or more epochs over the pairs. `policy` is updated in place (AM
// parameters only); `reference` is never touched.
std::vector<DpoStep> dpo_train(const train::Models &m, ParameterStore &policy, const ParameterStore &reference,
                               const std::vector<PreferencePair> &pairs, const DpoConfig &cfg);

} // namespace jvtoy::pref
