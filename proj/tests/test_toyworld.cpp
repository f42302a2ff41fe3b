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

#include "doctest.h"

#include "jvtoy/evalkit.hpp"
#include "jvtoy/toyworld.hpp"

#include <cmath>

using namespace jvtoy;
using namespace jvtoy::toy;

TEST_CASE("ground-truth tokens invert to the script with CER 0") {
    for (int factor : {4, 8}) {
        WorldConfig wc;
        wc.downsample_factor = factor;
        World w(wc);
        for (Stage st : {Stage::One, Stage::Two}) {
            for (std::uint64_t i = 0; i < 300; ++i) {
                const auto s = w.sample(st, Split::Train, i);
                const auto symbols = script_symbols(s.script);
                CHECK(w.symbols_from_tokens(s.tokens) == symbols);
                CHECK(eval::cer(symbols_text(symbols), symbols_text(w.symbols_from_tokens(s.tokens))).rate == 0.0);
                CHECK(s.tokens.size() == symbols.size() * wc.tokens_per_symbol());
                CHECK(s.frames.rows() == s.tokens.size() * wc.frames_per_token());
                for (int t : s.tokens) {
                    CHECK((t >= 0 && t < static_cast<int>(wc.codebook_size)));
                }
            }
        }
    }
}

TEST_CASE("stage 1 stream is single-speaker only") {
    World w(WorldConfig{});
    int multi = 0;
    for (std::uint64_t i = 0; i < 10000; ++i) {
        const auto s = w.sample(Stage::One, Split::Train, i);
        multi += s.script.num_speakers > 1 ? 1 : 0;
        CHECK(s.script.num_turns() == 1);
    }
    CHECK(multi == 0);
}

TEST_CASE("stage 2 speaker counts follow the configured distribution within 2%") {
    WorldConfig wc;
    World w(wc);
    std::vector<int> counts(9, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto s = w.sample(Stage::Two, Split::Train, static_cast<std::uint64_t>(i));
        REQUIRE(s.script.num_speakers >= 1);
        REQUIRE(s.script.num_speakers <= 8);
        ++counts[static_cast<std::size_t>(s.script.num_speakers)];
        CHECK(s.script.num_turns() <= wc.max_turns);
    }
    for (std::size_t k = 1; k <= 8; ++k) {
        const double observed = counts[k] / static_cast<double>(n);
        INFO("speakers " << k << " observed " << observed);
        CHECK(std::abs(observed - wc.speaker_weights[k - 1]) < 0.02);
    }
}

TEST_CASE("streams are deterministic and splits differ") {
    World a(WorldConfig{}), b(WorldConfig{});
    for (std::uint64_t i = 0; i < 50; ++i) {
        const auto x = a.sample(Stage::Two, Split::Train, i);
        const auto y = b.sample(Stage::Two, Split::Train, i);
        CHECK(x.tokens == y.tokens);
        CHECK(x.profiles[0].embedding == y.profiles[0].embedding);
        const auto fx = x.frames.data(), fy = y.frames.data();
        CHECK(std::equal(fx.begin(), fx.end(), fy.begin(), fy.end()));
        const auto h = a.sample(Stage::Two, Split::Heldout, i);
        CHECK(h.profiles[0].embedding != x.profiles[0].embedding);
    }
}

TEST_CASE("listener recovers script and speakers from ground-truth frames") {
    for (int factor : {4, 8}) {
        WorldConfig wc;
        wc.downsample_factor = factor;
        World w(wc);
        int symbol_errors = 0, speaker_errors = 0, total = 0;
        for (std::uint64_t i = 0; i < 200; ++i) {
            const auto s = w.sample(Stage::Two, Split::Heldout, i);
            const auto heard = w.listen(s.frames, s.profiles);
            const auto symbols = script_symbols(s.script);
            const auto speakers = script_speakers(s.script);
            REQUIRE(heard.symbols.size() == symbols.size());
            for (std::size_t j = 0; j < symbols.size(); ++j) {
                symbol_errors += heard.symbols[j] != symbols[j] ? 1 : 0;
                speaker_errors += heard.speakers[j] != speakers[j] ? 1 : 0;
                ++total;
            }
        }
        CHECK(symbol_errors == 0);
        CHECK(speaker_errors <= total / 200);
    }
}

TEST_CASE("one token per symbol drops the coarticulation bit that the frames carry") {
    WorldConfig wc;
    wc.downsample_factor = 8;
    World w8(wc);
    wc.downsample_factor = 4;
    World w4(wc);
    // 'a' followed by an even or odd consonant
    seq::DialogueScript even{{{0, {0, 2}}}, 1}, odd{{{0, {0, 3}}}, 1};
    const auto e8 = w8.render(even, 5, false), o8 = w8.render(odd, 5, false);
    CHECK(e8.tokens[0] == o8.tokens[0]);
    const auto e4 = w4.render(even, 5, false), o4 = w4.render(odd, 5, false);
    CHECK(e4.tokens[1] != o4.tokens[1]);
    bool coda_differs = false;
    for (std::size_t r = 4; r < 8; ++r) {
        for (std::size_t k = 0; k < wc.d_mel; ++k) {
            coda_differs = coda_differs || e8.frames.at(r, k) != o8.frames.at(r, k);
        }
    }
    CHECK(coda_differs);
}

TEST_CASE("averaging over the coarticulation bit corrupts the heard vowel") {
    WorldConfig wc;
    wc.downsample_factor = 8;
    World w(wc);
    // the same symbol before an even and an odd consonant, coda frames averaged
    int wrong = 0, total = 0;
    for (int x = 0; x < 32; ++x) {
        seq::DialogueScript even{{{0, {x, 2}}}, 1}, odd{{{0, {x, 3}}}, 1};
        const auto e = w.render(even, 5, false), o = w.render(odd, 5, false);
        for (const auto *s : {&e, &o}) {
            std::vector<double> f(s->frames.data().begin(), s->frames.data().end());
            for (std::size_t r = 4; r < 8; ++r) {
                for (std::size_t k = 0; k < wc.d_mel; ++k) {
                    f[r * wc.d_mel + k] = 0.5 * (e.frames.at(r, k) + o.frames.at(r, k));
                }
            }
            const auto heard = w.listen(Tensor::from(s->frames.shape(), f), s->profiles);
            wrong += heard.symbols[0] != x ? 1 : 0;
            ++total;
        }
    }
    CHECK(wrong >= total * 3 / 4);
}

TEST_CASE("held-out 3-speaker 6-turn script introduces every speaker") {
    World w(WorldConfig{});
    const auto s = w.draw_script(3, 6, 7);
    CHECK(s.num_turns() == 6);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(s.turns[j].speaker == static_cast<int>(j));
    }
    for (std::size_t j = 1; j < 6; ++j) {
        CHECK(s.turns[j].speaker != s.turns[j - 1].speaker);
    }
}
