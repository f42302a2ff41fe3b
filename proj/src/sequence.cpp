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

#include "jvtoy/sequence.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace jvtoy::seq {

std::size_t DialogueScript::text_length() const {
    std::size_t n = 0;
    for (const auto &t : turns) {
        n += t.text.size();
    }
    return n;
}

void DialogueScript::validate() const {
    if (turns.empty()) {
        throw std::invalid_argument("dialogue script has no turns");
    }
    for (std::size_t j = 0; j < turns.size(); ++j) {
        if (turns[j].speaker < 0 || turns[j].speaker >= num_speakers) {
            throw std::invalid_argument("turn " + std::to_string(j) + " names unknown speaker " +
                                        std::to_string(turns[j].speaker) + " (dialogue has " +
                                        std::to_string(num_speakers) + ")");
        }
        if (turns[j].text.empty()) {
            throw std::invalid_argument("turn " + std::to_string(j) + " has empty text");
        }
    }
}

std::vector<int> UnifiedSequence::speech_tokens() const {
    std::vector<int> out;
    for (std::size_t i = s.begin; i < s.end; ++i) {
        out.push_back(elements[i].value);
    }
    return out;
}

UnifiedSequence build_prefix(const std::vector<SpeakerProfile> &profiles, const DialogueScript &script,
                             bool use_spk_embeddings) {
    if (profiles.empty()) {
        throw std::invalid_argument("no speaker profiles");
    }
    if (script.num_speakers != static_cast<int>(profiles.size())) {
        throw std::invalid_argument("script declares " + std::to_string(script.num_speakers) + " speakers but " +
                                    std::to_string(profiles.size()) + " profiles were given");
    }
    script.validate();
    UnifiedSequence seq;
    seq.use_spk_embeddings = use_spk_embeddings;
    seq.embeddings.resize(profiles.size());
    std::vector<bool> seen(profiles.size(), false);
    for (const auto &p : profiles) {
        if (p.tag < 0 || p.tag >= static_cast<int>(profiles.size()) || seen[static_cast<std::size_t>(p.tag)]) {
            throw std::invalid_argument("speaker tags must be distinct and contiguous from 0");
        }
        if (p.embedding.size() != profiles.front().embedding.size()) {
            throw std::invalid_argument("speaker embeddings differ in dimension");
        }
        seen[static_cast<std::size_t>(p.tag)] = true;
        seq.embeddings[static_cast<std::size_t>(p.tag)] = p.embedding;
    }
    for (int k = 0; k < static_cast<int>(profiles.size()); ++k) {
        seq.elements.push_back({Kind::SpkTag, k});
        if (use_spk_embeddings) {
            seq.elements.push_back({Kind::SpkEmb, k});
        }
    }
    seq.p = {0, seq.elements.size()};
    for (const auto &turn : script.turns) {
        seq.elements.push_back({Kind::SpkTag, turn.speaker});
        for (int x : turn.text) {
            seq.elements.push_back({Kind::Text, x});
        }
    }
    seq.t = {seq.p.end, seq.elements.size()};
    seq.s = {seq.elements.size(), seq.elements.size()};
    return seq;
}

UnifiedSequence build_sequence(const std::vector<SpeakerProfile> &profiles, const DialogueScript &script,
                               const std::vector<int> &speech_tokens, bool use_spk_embeddings) {
    if (speech_tokens.empty()) {
        throw std::invalid_argument("speech token sequence is empty");
    }
    UnifiedSequence seq = build_prefix(profiles, script, use_spk_embeddings);
    for (int s : speech_tokens) {
        seq.elements.push_back({Kind::Speech, s});
    }
    seq.s = {seq.t.end, seq.elements.size()};
    return seq;
}

std::vector<bool> loss_mask(const UnifiedSequence &seq) {
    std::vector<bool> mask(seq.size(), false);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        mask[i] = seq.s.contains(i + 1);
    }
    return mask;
}

namespace {

char kind_letter(Kind k) {
    switch (k) {
    case Kind::SpkTag:
        return 'G';
    case Kind::SpkEmb:
        return 'E';
    case Kind::Text:
        return 'X';
    case Kind::Speech:
        return 'S';
    }
    return '?';
}

int parse_int(std::string_view s, const char *what) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw std::invalid_argument(std::string("bad ") + what + ": '" + std::string(s) + "'");
    }
    return v;
}

} // namespace

std::string render(const UnifiedSequence &seq) {
    std::ostringstream os;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i == seq.t.begin && i > 0) {
            os << " |";
        }
        if (i == seq.s.begin && seq.s.size() > 0) {
            os << " |";
        }
        os << (i == 0 ? "" : " ") << kind_letter(seq.elements[i].kind) << seq.elements[i].value;
    }
    os << '\n';
    char buf[32];
    for (std::size_t k = 0; k < seq.embeddings.size(); ++k) {
        os << "emb " << k;
        for (double v : seq.embeddings[k]) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << ' ' << buf;
        }
        os << '\n';
    }
    return os.str();
}

UnifiedSequence parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("empty sequence text");
    }
    UnifiedSequence seq;
    seq.use_spk_embeddings = false;
    std::istringstream items(line);
    std::string item;
    int segment = 0;
    std::size_t bounds[3] = {0, 0, 0};
    while (items >> item) {
        if (item == "|") {
            if (++segment > 2) {
                throw std::invalid_argument("too many segment separators");
            }
            bounds[segment] = seq.elements.size();
            continue;
        }
        Element e;
        switch (item[0]) {
        case 'G':
            e.kind = Kind::SpkTag;
            break;
        case 'E':
            e.kind = Kind::SpkEmb;
            seq.use_spk_embeddings = true;
            break;
        case 'X':
            e.kind = Kind::Text;
            break;
        case 'S':
            e.kind = Kind::Speech;
            break;
        default:
            throw std::invalid_argument("unknown element '" + item + "'");
        }
        e.value = parse_int(std::string_view(item).substr(1), "element value");
        seq.elements.push_back(e);
    }
    const std::size_t n = seq.elements.size();
    seq.p = {0, bounds[1]};
    seq.t = {bounds[1], segment >= 2 ? bounds[2] : n};
    seq.s = {seq.t.end, n};
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string head;
        std::size_t k = 0;
        ls >> head >> k;
        if (head != "emb" || k != seq.embeddings.size()) {
            throw std::invalid_argument("bad embedding line: " + line);
        }
        std::vector<double> v;
        std::string tok;
        while (ls >> tok) {
            v.push_back(std::stod(tok));
        }
        seq.embeddings.push_back(std::move(v));
    }
    return seq;
}

DialogueScript read_script(std::istream &in, std::string_view alphabet) {
    DialogueScript script;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        const auto colon = line.find(':');
        if (line.rfind("SPK", 0) != 0 || colon == std::string::npos) {
            throw std::invalid_argument("script line " + std::to_string(lineno) + ": expected 'SPK<k>: <tokens>'");
        }
        Turn turn;
        turn.speaker = parse_int(std::string_view(line).substr(3, colon - 3), "speaker index");
        std::istringstream toks(line.substr(colon + 1));
        std::string tok;
        while (toks >> tok) {
            const auto pos = alphabet.find(tok);
            if (tok.size() != 1 || pos == std::string_view::npos) {
                throw std::invalid_argument("script line " + std::to_string(lineno) + ": unknown token '" + tok + "'");
            }
            turn.text.push_back(static_cast<int>(pos));
        }
        script.num_speakers = std::max(script.num_speakers, turn.speaker + 1);
        script.turns.push_back(std::move(turn));
    }
    script.validate();
    return script;
}

void write_script(std::ostream &out, const DialogueScript &script, std::string_view alphabet) {
    for (const auto &turn : script.turns) {
        out << "SPK" << turn.speaker << ":";
        for (int x : turn.text) {
            out << ' ' << alphabet.at(static_cast<std::size_t>(x));
        }
        out << '\n';
    }
}

} // namespace jvtoy::seq
