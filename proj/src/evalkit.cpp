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

#include "jvtoy/evalkit.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace jvtoy::eval {

std::vector<std::string> char_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto lead = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (lead >= 0xF0) {
            len = 4;
        } else if (lead >= 0xE0) {
            len = 3;
        } else if (lead >= 0xC0) {
            len = 2;
        }
        len = std::min(len, text.size() - i);
        std::string_view cp = text.substr(i, len);
        if (!(len == 1 && (cp[0] == ' ' || cp[0] == '\t' || cp[0] == '\n' || cp[0] == '\r'))) {
            out.emplace_back(cp);
        }
        i += len;
    }
    return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream is{std::string(text)};
    std::string w;
    while (is >> w) {
        out.push_back(w);
    }
    return out;
}

MetricReport rate_report(const EditCounts &counts, std::size_t ref_len) {
    if (ref_len == 0) {
        throw UndefinedRate("error rate is undefined for an empty reference");
    }
    MetricReport r;
    r.counts = counts;
    r.ref_len = ref_len;
    r.rate = static_cast<double>(counts.total()) / static_cast<double>(ref_len);
    return r;
}

MetricReport cer(std::string_view ref, std::string_view hyp) { return error_rate(char_tokens(ref), char_tokens(hyp)); }

MetricReport wer(std::string_view ref, std::string_view hyp) { return error_rate(word_tokens(ref), word_tokens(hyp)); }

std::vector<std::string> SpeakerTranscript::concatenated() const {
    std::vector<const Utterance *> order;
    for (const auto &u : utterances) {
        order.push_back(&u);
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const Utterance *a, const Utterance *b) { return a->chrono_index < b->chrono_index; });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && order[i]->chrono_index == order[i - 1]->chrono_index) {
            throw std::invalid_argument("speaker " + speaker + " has two utterances at chrono index " +
                                        std::to_string(order[i]->chrono_index));
        }
        out.insert(out.end(), order[i]->tokens.begin(), order[i]->tokens.end());
    }
    return out;
}

MetricReport cpwer(const std::vector<SpeakerTranscript> &refs, const std::vector<SpeakerTranscript> &hyps) {
    if (refs.size() > kMaxCpSpeakers || hyps.size() > kMaxCpSpeakers) {
        throw std::invalid_argument("cpWER supports at most " + std::to_string(kMaxCpSpeakers) +
                                    " speakers per side (got " + std::to_string(refs.size()) + " ref, " +
                                    std::to_string(hyps.size()) + " hyp)");
    }
    const std::size_t k = std::max(refs.size(), hyps.size());
    std::vector<std::vector<std::string>> r(k), h(k);
    std::size_t ref_len = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        r[i] = refs[i].concatenated();
        ref_len += r[i].size();
    }
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        h[i] = hyps[i].concatenated();
    }
    if (ref_len == 0) {
        throw UndefinedRate("cpWER is undefined for an empty reference");
    }

    std::vector<EditCounts> cost(k * k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            cost[i * k + j] = edit_distance(r[i], h[j]);
        }
    }

    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::size_t> best = perm;
    std::size_t best_total = std::numeric_limits<std::size_t>::max();
    do {
        std::size_t total = 0;
        for (std::size_t i = 0; i < k; ++i) {
            total += cost[i * k + perm[i]].total();
        }
        if (total < best_total) {
            best_total = total;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    EditCounts sum;
    MetricReport out;
    for (std::size_t i = 0; i < k; ++i) {
        const auto &c = cost[i * k + best[i]];
        sum.sub += c.sub;
        sum.del += c.del;
        sum.ins += c.ins;
    }
    out = rate_report(sum, ref_len);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        out.assignment.push_back(best[i] < hyps.size() ? static_cast<int>(best[i]) : -1);
    }
    return out;
}

std::vector<SpeakerTranscript> read_transcripts(std::istream &in, TokenUnit unit) {
    std::vector<SpeakerTranscript> out;
    std::map<std::string, std::size_t> index;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw std::invalid_argument("transcript line " + std::to_string(lineno) +
                                        ": expected <chrono_index>\\t<speaker_id>\\t<text>");
        }
        Utterance u;
        try {
            u.chrono_index = std::stol(line.substr(0, t1));
        } catch (const std::exception &) {
            throw std::invalid_argument("transcript line " + std::to_string(lineno) + ": bad chrono index");
        }
        const std::string speaker = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string_view text = std::string_view(line).substr(t2 + 1);
        u.tokens = unit == TokenUnit::Char ? char_tokens(text) : word_tokens(text);
        auto [it, inserted] = index.emplace(speaker, out.size());
        if (inserted) {
            out.push_back({speaker, {}});
        }
        out[it->second].utterances.push_back(std::move(u));
    }
    for (auto &s : out) {
        std::stable_sort(s.utterances.begin(), s.utterances.end(),
                         [](const Utterance &a, const Utterance &b) { return a.chrono_index < b.chrono_index; });
    }
    return out;
}

} // namespace jvtoy::eval
