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

#include "jvtoy/toyworld.hpp"

#include "jvtoy/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace jvtoy::toy {

namespace {

constexpr std::size_t kHalf = 4; // frames per onset / coda
constexpr int kCodaClasses = 6;   // vowel u in 0..3 shifted by 2v
constexpr double kCodaJitter = 0.3;

std::uint64_t stream_seed(std::uint64_t world, Stage stage, Split split, std::uint64_t index) {
    const std::uint64_t tag = (stage == Stage::One ? 0x51ULL : 0x52ULL) ^ (split == Split::Train ? 0x100ULL : 0x200ULL);
    return mix_seed(mix_seed(world, tag), index);
}

} // namespace

void WorldConfig::validate() const {
    if (text_vocab != 32) {
        throw std::invalid_argument("toy world: text_vocab must be 32 (8 consonants x 4 vowels)");
    }
    if (downsample_factor != 4 && downsample_factor != 8) {
        throw std::invalid_argument("toy world: downsample_factor must be 4 or 8");
    }
    if (codebook_size < 96) {
        throw std::invalid_argument("toy world: codebook needs at least 96 entries for the token map");
    }
    if (max_speakers < 1 || max_speakers > 8 || speaker_weights.size() < max_speakers) {
        throw std::invalid_argument("toy world: 1..8 speakers with one weight each");
    }
    if (stage1_min_len < 1 || stage1_min_len > stage1_max_len || stage2_min_turn < 1 ||
        stage2_min_turn > stage2_max_turn || max_turns < 1) {
        throw std::invalid_argument("toy world: bad length ranges");
    }
}

World::World(WorldConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(mix_seed(cfg_.seed, 0x574f524c44ULL));
    onset_.resize(8 * kHalf * cfg_.d_mel);
    coda_.resize(kCodaClasses * kHalf * cfg_.d_mel);
    proj_.resize(cfg_.d_mel * cfg_.d_spk);
    for (auto &v : onset_) {
        v = rng.normal();
    }
    // Coda classes lie along one axis, so the anticipation shift 2v moves every
    // vowel the same way.
    std::vector<double> axis(kHalf * cfg_.d_mel);
    for (auto &v : axis) {
        v = 0.6 * rng.normal();
    }
    for (int q = 0; q < kCodaClasses; ++q) {
        for (std::size_t i = 0; i < axis.size(); ++i) {
            coda_[static_cast<std::size_t>(q) * axis.size() + i] = q * axis[i] + kCodaJitter * rng.normal();
        }
    }
    const double s = cfg_.offset_scale / std::sqrt(static_cast<double>(cfg_.d_spk));
    for (auto &v : proj_) {
        v = s * rng.normal();
    }
}

std::vector<seq::SpeakerProfile> World::draw_profiles(std::size_t n, std::uint64_t speaker_seed) const {
    Rng rng(mix_seed(speaker_seed, 0x53504bULL));
    std::vector<seq::SpeakerProfile> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        out[k].tag = static_cast<int>(k);
        out[k].embedding.resize(cfg_.d_spk);
        for (auto &v : out[k].embedding) {
            v = static_cast<double>(static_cast<float>(rng.normal()));
        }
    }
    return out;
}

seq::DialogueScript World::draw_script(std::size_t speakers, std::size_t turns, std::uint64_t seed) const {
    Rng rng(mix_seed(seed, 0x534352ULL));
    seq::DialogueScript s;
    s.num_speakers = static_cast<int>(speakers);
    int prev = -1;
    for (std::size_t j = 0; j < turns; ++j) {
        int spk = 0;
        if (speakers > 1) {
            // consecutive turns change speaker; the first pass introduces everyone in order
            if (j < speakers) {
                spk = static_cast<int>(j);
            } else {
                do {
                    spk = static_cast<int>(rng.uniform_int(speakers));
                } while (spk == prev);
            }
        }
        prev = spk;
        seq::Turn t{spk, {}};
        const std::size_t len =
            static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cfg_.stage2_min_turn), static_cast<int>(cfg_.stage2_max_turn)));
        t.text.resize(len);
        for (auto &x : t.text) {
            x = static_cast<int>(rng.uniform_int(cfg_.text_vocab));
        }
        s.turns.push_back(std::move(t));
    }
    return s;
}

Sample World::sample(Stage stage, Split split, std::uint64_t index) const {
    const std::uint64_t seed = stream_seed(cfg_.seed, stage, split, index);
    Rng rng(seed);
    seq::DialogueScript script;
    if (stage == Stage::One) {
        script.num_speakers = 1;
        seq::Turn t{0, {}};
        t.text.resize(static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(cfg_.stage1_min_len), static_cast<int>(cfg_.stage1_max_len))));
        for (auto &x : t.text) {
            x = static_cast<int>(rng.uniform_int(cfg_.text_vocab));
        }
        script.turns.push_back(std::move(t));
    } else {
        double u = rng.uniform();
        std::size_t n = 1;
        double total = 0.0;
        for (std::size_t k = 0; k < cfg_.max_speakers; ++k) {
            total += cfg_.speaker_weights[k];
        }
        u *= total;
        for (std::size_t k = 0; k < cfg_.max_speakers; ++k) {
            if (u < cfg_.speaker_weights[k] || k + 1 == cfg_.max_speakers) {
                n = k + 1;
                break;
            }
            u -= cfg_.speaker_weights[k];
        }
        const std::size_t turns =
            static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n), static_cast<int>(std::max(n, cfg_.max_turns))));
        script = draw_script(n, turns, rng.next_u64());
    }
    Sample s = render(script, rng.next_u64());
    s.id = index;
    return s;
}

Sample World::render(const seq::DialogueScript &script, std::uint64_t speaker_seed, bool noisy) const {
    script.validate();
    Sample s;
    s.script = script;
    s.profiles = draw_profiles(static_cast<std::size_t>(script.num_speakers), speaker_seed);
    const auto symbols = script_symbols(script);
    s.tokens = tokens_for(symbols);
    s.frames = frames_for(symbols, script_speakers(script), s.profiles, mix_seed(speaker_seed, 0x4e4f4953ULL), noisy);
    return s;
}

std::vector<int> World::tokens_for(const std::vector<int> &symbols) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        const int x = symbols[i];
        if (cfg_.downsample_factor == 8) {
            out.push_back(x);
        } else {
            const int v = i + 1 < symbols.size() ? (symbols[i + 1] % 8) % 2 : 0;
            out.push_back(x);
            out.push_back(32 + 2 * x + v);
        }
    }
    return out;
}

std::vector<int> World::symbols_from_tokens(const std::vector<int> &tokens) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int t = tokens[i];
        if (t >= 0 && t < 32) {
            out.push_back(t);
            // a matching coda completes the symbol
            if (cfg_.downsample_factor == 4 && i + 1 < tokens.size() && tokens[i + 1] >= 32 && tokens[i + 1] < 96 &&
                (tokens[i + 1] - 32) / 2 == t) {
                ++i;
            }
        } else if (cfg_.downsample_factor == 4 && t >= 32 && t < 96) {
            out.push_back((t - 32) / 2);
        }
    }
    return out;
}

std::vector<double> World::speaker_offset(const std::vector<double> &embedding) const {
    if (embedding.size() != cfg_.d_spk) {
        throw std::invalid_argument("toy world: speaker embedding has the wrong dimension");
    }
    std::vector<double> o(cfg_.d_mel, 0.0);
    for (std::size_t i = 0; i < cfg_.d_mel; ++i) {
        for (std::size_t j = 0; j < cfg_.d_spk; ++j) {
            o[i] += proj_[i * cfg_.d_spk + j] * embedding[j];
        }
    }
    return o;
}

Tensor World::frames_for(const std::vector<int> &symbols, const std::vector<int> &speaker_of_symbol,
                         const std::vector<seq::SpeakerProfile> &profiles, std::uint64_t noise_seed, bool noisy) const {
    if (symbols.size() != speaker_of_symbol.size()) {
        throw std::invalid_argument("toy world: one speaker per symbol required");
    }
    const std::size_t d = cfg_.d_mel;
    std::vector<std::vector<double>> offsets;
    for (const auto &p : profiles) {
        offsets.push_back(speaker_offset(p.embedding));
    }
    Rng rng(noise_seed);
    std::vector<double> f(symbols.size() * kFramesPerSymbol * d);
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        const int x = symbols[i];
        const int c = x % 8, u = x / 8;
        const int v = i + 1 < symbols.size() ? (symbols[i + 1] % 8) % 2 : 0;
        const int q = u + 2 * v;
        const auto &o = offsets.at(static_cast<std::size_t>(speaker_of_symbol[i]));
        for (std::size_t r = 0; r < kFramesPerSymbol; ++r) {
            for (std::size_t k = 0; k < d; ++k) {
                const double base = r < kHalf ? onset_[(static_cast<std::size_t>(c) * kHalf + r) * d + k]
                                              : coda_[(static_cast<std::size_t>(q) * kHalf + r - kHalf) * d + k];
                f[(i * kFramesPerSymbol + r) * d + k] = base + o[k] + (noisy ? cfg_.noise_std * rng.normal() : 0.0);
            }
        }
    }
    return Tensor::from({symbols.size() * kFramesPerSymbol, d}, std::move(f));
}

World::Heard World::listen(const Tensor &frames, const std::vector<seq::SpeakerProfile> &cast) const {
    if (frames.dim() != 2 || frames.cols() != cfg_.d_mel) {
        throw ShapeError("listener: frames have shape " + shape_str(frames.shape()));
    }
    if (cast.empty()) {
        throw std::invalid_argument("listener: empty cast");
    }
    const std::size_t d = cfg_.d_mel;
    const std::size_t blocks = frames.rows() / kFramesPerSymbol;
    auto fv = frames.data();
    std::vector<std::vector<double>> offsets;
    for (const auto &p : cast) {
        offsets.push_back(speaker_offset(p.embedding));
    }
    std::vector<int> cons(blocks), coda(blocks);
    Heard out;
    out.speakers.resize(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < cast.size(); ++k) {
            auto err = [&](const std::vector<double> &table, int cls, std::size_t first) {
                double e = 0.0;
                for (std::size_t r = 0; r < kHalf; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        const double diff = fv[(b * kFramesPerSymbol + first + r) * d + j] -
                                            table[(static_cast<std::size_t>(cls) * kHalf + r) * d + j] - offsets[k][j];
                        e += diff * diff;
                    }
                }
                return e;
            };
            double eo = std::numeric_limits<double>::infinity(), ec = eo;
            int bc = 0, bq = 0;
            for (int c = 0; c < 8; ++c) {
                const double e = err(onset_, c, 0);
                if (e < eo) {
                    eo = e;
                    bc = c;
                }
            }
            for (int q = 0; q < kCodaClasses; ++q) {
                const double e = err(coda_, q, kHalf);
                if (e < ec) {
                    ec = e;
                    bq = q;
                }
            }
            if (eo + ec < best) {
                best = eo + ec;
                cons[b] = bc;
                coda[b] = bq;
                out.speakers[b] = cast[k].tag;
            }
        }
    }
    for (std::size_t b = 0; b < blocks; ++b) {
        const int v = b + 1 < blocks ? cons[b + 1] % 2 : 0;
        const int u = std::clamp(coda[b] - 2 * v, 0, 3);
        out.symbols.push_back(cons[b] + 8 * u);
    }
    return out;
}

std::vector<int> script_symbols(const seq::DialogueScript &script) {
    std::vector<int> out;
    for (const auto &t : script.turns) {
        out.insert(out.end(), t.text.begin(), t.text.end());
    }
    return out;
}

std::vector<int> script_speakers(const seq::DialogueScript &script) {
    std::vector<int> out;
    for (const auto &t : script.turns) {
        out.insert(out.end(), t.text.size(), t.speaker);
    }
    return out;
}

std::string symbols_text(const std::vector<int> &symbols) {
    std::string s;
    for (int x : symbols) {
        s.push_back(kAlphabet.at(static_cast<std::size_t>(x)));
    }
    return s;
}

} // namespace jvtoy::toy
