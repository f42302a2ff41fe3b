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

#include <algorithm>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace jvtoy::eval {

struct EditCounts {
    std::size_t sub = 0;
    std::size_t del = 0;
    std::size_t ins = 0;

    std::size_t total() const { return sub + del + ins; }
    bool operator==(const EditCounts &) const = default;
};

// Levenshtein alignment under unit costs. Among minimum-cost alignments the
// one with the most substitutions wins (a substitution is preferred over a
// deletion plus an insertion), which pins the (sub, del, ins) split.
template <typename T>
EditCounts edit_distance(std::span<const T> ref, std::span<const T> hyp) {
    const std::size_t n = ref.size(), m = hyp.size();
    struct Cell {
        std::size_t cost;
        std::size_t subs;
    };
    auto better = [](Cell a, Cell b) { return a.cost < b.cost || (a.cost == b.cost && a.subs > b.subs); };
    std::vector<Cell> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) {
        prev[j] = {j, 0};
    }
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = {i, 0};
        for (std::size_t j = 1; j <= m; ++j) {
            const bool same = ref[i - 1] == hyp[j - 1];
            Cell best{prev[j - 1].cost + (same ? 0 : 1), prev[j - 1].subs + (same ? 0 : 1)};
            const Cell del{prev[j].cost + 1, prev[j].subs};
            const Cell ins{cur[j - 1].cost + 1, cur[j - 1].subs};
            if (better(del, best)) {
                best = del;
            }
            if (better(ins, best)) {
                best = ins;
            }
            cur[j] = best;
        }
        std::swap(prev, cur);
    }
    // del - ins = n - m and del + ins = cost - sub fix the remaining split.
    const Cell end = prev[m];
    const std::size_t gaps = end.cost - end.subs;
    EditCounts c;
    c.sub = end.subs;
    c.del = (gaps + n - m) / 2;
    c.ins = gaps - c.del;
    return c;
}

template <typename T>
EditCounts edit_distance(const std::vector<T> &ref, const std::vector<T> &hyp) {
    return edit_distance(std::span<const T>(ref), std::span<const T>(hyp));
}

struct UndefinedRate : std::domain_error {
    using std::domain_error::domain_error;
};

struct MetricReport {
    EditCounts counts;
    std::size_t ref_len = 0;
    double rate = 0.0;
    // cpWER only: hyp speaker index assigned to each ref speaker; -1 marks an
    // empty pseudo-speaker introduced by padding.
    std::vector<int> assignment;
};

// UTF-8 code points (character tokens) and whitespace-separated words.
std::vector<std::string> char_tokens(std::string_view text);
std::vector<std::string> word_tokens(std::string_view text);

MetricReport rate_report(const EditCounts &counts, std::size_t ref_len);

template <typename T>
MetricReport error_rate(const std::vector<T> &ref, const std::vector<T> &hyp) {
    return rate_report(edit_distance(ref, hyp), ref.size());
}

MetricReport cer(std::string_view ref, std::string_view hyp);
MetricReport wer(std::string_view ref, std::string_view hyp);

struct Utterance {
    long chrono_index = 0;
    std::vector<std::string> tokens;
};

struct SpeakerTranscript {
    std::string speaker;
    std::vector<Utterance> utterances;

    // Chronological concatenation; throws if chrono indices are not strictly increasing.
    std::vector<std::string> concatenated() const;
};

inline constexpr std::size_t kMaxCpSpeakers = 8;

// Concatenated minimum-permutation error rate. The side with fewer speakers
// is padded with empty pseudo-speakers, every assignment is enumerated and the
// lowest total error is kept (first in lexicographic permutation order on ties).
MetricReport cpwer(const std::vector<SpeakerTranscript> &refs, const std::vector<SpeakerTranscript> &hyps);

enum class TokenUnit { Char, Word };

// Lines of "<chrono_index>\t<speaker_id>\t<text>"; speakers are returned in
// order of first appearance, utterances sorted by chrono index.
std::vector<SpeakerTranscript> read_transcripts(std::istream &in, TokenUnit unit);

} // namespace jvtoy::eval
