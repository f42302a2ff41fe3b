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

#include "jvtoy/ar_model.hpp"
#include "jvtoy/ops.hpp"
#include "jvtoy/rng.hpp"

#include <algorithm>
#include <cmath>

using namespace jvtoy;
using namespace jvtoy::am;
using seq::DialogueScript;
using seq::Kind;
using seq::SpeakerProfile;

namespace {

ArConfig small_config() {
    ArConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 32;
    c.text_vocab = 8;
    c.speech_vocab = 10;
    c.d_spk = 4;
    c.max_speakers = 4;
    c.max_positions = 64;
    c.tokens_per_symbol = 2;
    return c;
}

std::vector<SpeakerProfile> profiles(int n, std::size_t dim, Rng &rng) {
    std::vector<SpeakerProfile> out;
    for (int k = 0; k < n; ++k) {
        SpeakerProfile p{k, std::vector<double>(dim)};
        for (auto &x : p.embedding) {
            x = rng.normal();
        }
        out.push_back(p);
    }
    return out;
}

struct Case {
    std::vector<SpeakerProfile> profiles;
    DialogueScript script;
    std::vector<int> speech;
};

Case random_case(Rng &rng, const ArConfig &c) {
    Case k;
    const int n = 1 + static_cast<int>(rng.uniform_int(3));
    k.profiles = profiles(n, c.d_spk, rng);
    k.script.num_speakers = n;
    const std::size_t turns = 1 + rng.uniform_int(3);
    std::size_t symbols = 0;
    for (std::size_t j = 0; j < turns; ++j) {
        seq::Turn t{static_cast<int>(rng.uniform_int(static_cast<std::size_t>(n))), {}};
        t.text.resize(1 + rng.uniform_int(4));
        for (auto &x : t.text) {
            x = static_cast<int>(rng.uniform_int(c.text_vocab));
        }
        symbols += t.text.size();
        k.script.turns.push_back(t);
    }
    k.speech.resize(symbols * c.tokens_per_symbol);
    for (auto &x : k.speech) {
        x = static_cast<int>(rng.uniform_int(c.speech_vocab - 1));
    }
    k.speech.push_back(c.eos());
    return k;
}

} // namespace

TEST_CASE("logit shape law") {
    const auto cfg = small_config();
    ArModel model(cfg);
    ParameterStore ps(1);
    model.init(ps);
    Rng rng(1);
    DialogueScript script{{{0, {1, 2}}}, 1};
    const auto s = seq::build_sequence(profiles(1, cfg.d_spk, rng), script, {1, 2, 3, 4, 9}, true);
    const auto out = model.forward(ps, s);
    CHECK(out.logits.shape() == Shape{5, cfg.speech_vocab});
    CHECK(out.hidden.shape() == Shape{5, cfg.d_model});
}

TEST_CASE("position and segment ids") {
    const auto cfg = small_config();
    ArModel model(cfg);
    Rng rng(1);
    DialogueScript script{{{0, {1, 2}}, {1, {3}}}, 2};
    const auto s = seq::build_sequence(profiles(2, cfg.d_spk, rng), script, {1, 2, 3, 4, 5, 6, 9}, true);
    // P: G0 E0 G1 E1 | T: G0 X1 X2 G1 X3 | S: 7 tokens
    CHECK(model.position_ids(s) == std::vector<std::size_t>{0, 0, 0, 0, 0, 0, 1, 2, 2, 0, 0, 1, 1, 2, 2, 3});
    CHECK(model.segment_ids(s) == std::vector<std::size_t>{0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 3, 2, 3, 2, 3, 2});
}

TEST_CASE("causality: later elements never affect earlier logits") {
    const auto cfg = small_config();
    ArModel model(cfg);
    ParameterStore ps(3);
    model.init(ps);
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const auto c = random_case(rng, cfg);
        const auto s = seq::build_sequence(c.profiles, c.script, c.speech, true);
        const auto base = model.forward(ps, s);
        // perturb one element at p (never a P tag, so the sequence stays valid)
        const std::size_t p = s.t.begin + 1 + rng.uniform_int(s.size() - s.t.begin - 1);
        auto s2 = s;
        auto &e = s2.elements[p];
        if (e.kind == Kind::Text) {
            e.value = (e.value + 1) % static_cast<int>(cfg.text_vocab);
        } else if (e.kind == Kind::Speech) {
            e.value = (e.value + 1) % static_cast<int>(cfg.speech_vocab);
        } else {
            e.value = (e.value + 1) % static_cast<int>(c.profiles.size());
        }
        const auto pert = model.forward(ps, s2);
        const std::size_t v = cfg.speech_vocab;
        for (std::size_t r = 0; r < s.s.size(); ++r) {
            const std::size_t position = s.s.begin - 1 + r;
            bool same = true;
            for (std::size_t j = 0; j < v; ++j) {
                same = same && base.logits.data()[r * v + j] == pert.logits.data()[r * v + j];
            }
            if (position < p) {
                CHECK(same);
            }
        }
    }
}

TEST_CASE("speaker embedding pathway") {
    auto cfg = small_config();
    Rng rng(5);
    DialogueScript script{{{0, {1, 2, 3}}}, 1};
    const std::vector<int> speech{1, 2, 3, 4, 5, 6, 9};
    const auto p1 = profiles(1, cfg.d_spk, rng);
    const auto p2 = profiles(1, cfg.d_spk, rng);
    ArModel on(cfg);
    ParameterStore ps(9);
    on.init(ps);
    const auto a = on.forward(ps, seq::build_sequence(p1, script, speech, true)).logits;
    const auto b = on.forward(ps, seq::build_sequence(p2, script, speech, true)).logits;
    bool differ = false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        differ = differ || a.data()[i] != b.data()[i];
    }
    CHECK(differ);

    cfg.use_spk_embeddings = false;
    ArModel off(cfg);
    const auto c = off.forward(ps, seq::build_sequence(p1, script, speech, false)).logits;
    const auto d = off.forward(ps, seq::build_sequence(p2, script, speech, false)).logits;
    bool toggled = false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        CHECK(c.data()[i] == d.data()[i]);
        toggled = toggled || a.data()[i] != c.data()[i];
    }
    CHECK(toggled);
    CHECK_THROWS_AS(off.forward(ps, seq::build_sequence(p1, script, speech, true)), std::invalid_argument);
}

TEST_CASE("am_loss") {
    SUBCASE("uniform logits") {
        const Tensor logits = Tensor::zeros({4, 128});
        CHECK(am_loss(logits, {1, 5, 7, 127}, {true, true, true, true}).item() ==
              doctest::Approx(std::log(128.0)).epsilon(1e-6));
    }
    SUBCASE("scalar oracle on three positions with one masked out") {
        const std::vector<double> v{0.5, -1.0, 2.0, 0.1, 0.0, 0.3, -0.7, 1.5, 1.0, 1.0, -2.0, 0.25};
        const Tensor logits = Tensor::from({3, 4}, v);
        const std::vector<int> targets{2, 0, 3};
        const std::vector<bool> mask{true, false, true};
        double acc = 0.0;
        int used = 0;
        for (int r = 0; r < 3; ++r) {
            if (!mask[static_cast<std::size_t>(r)]) {
                continue;
            }
            double z = 0.0;
            for (int j = 0; j < 4; ++j) {
                z += std::exp(v[static_cast<std::size_t>(r * 4 + j)]);
            }
            acc += std::log(z) - v[static_cast<std::size_t>(r * 4 + targets[static_cast<std::size_t>(r)])];
            ++used;
        }
        CHECK(am_loss(logits, targets, mask).item() == doctest::Approx(acc / used).epsilon(1e-6));
    }
    SUBCASE("confident correct logits drive the loss to zero") {
        const Tensor logits = Tensor::from({1, 3}, {0.0, 60.0, 0.0});
        CHECK(am_loss(logits, {1}, {true}).item() < 1e-12);
    }
    CHECK_THROWS_AS(am_loss(Tensor::zeros({2, 3}), {0, 1}, {false, false}), std::invalid_argument);
}

TEST_CASE("L_AM passes grad_check at 1e-3") {
    auto cfg = small_config();
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.n_layers = 1;
    ArModel model(cfg);
    ParameterStore ps(11);
    model.init(ps);
    CHECK(ps.parameter_count() <= 5000);
    Rng rng(3);
    DialogueScript script{{{0, {1, 2}}, {1, {3}}}, 2};
    const auto s = seq::build_sequence(profiles(2, cfg.d_spk, rng), script, {1, 2, 3, 4, 5, 6, 9}, true);
    const auto mask = std::vector<bool>(s.s.size(), true);
    const auto report = grad_check(
        [&](const ParameterStore &p) { return am_loss(model.forward(p, s).logits, s.speech_tokens(), mask); }, ps,
        1e-3);
    for (const auto &e : report.entries) {
        INFO(e.name << " rel " << e.max_rel_err);
        CHECK(e.pass);
    }
    CHECK(report.pass);
}

TEST_CASE("sampling") {
    const auto cfg = small_config();
    ArModel model(cfg);
    ParameterStore ps(21);
    model.init(ps);
    Rng rng(2);
    DialogueScript script{{{0, {1, 2}}, {1, {3, 4}}}, 2};
    const auto pre = seq::build_prefix(profiles(2, cfg.d_spk, rng), script, true);
    CHECK(expected_tokens(pre, cfg.tokens_per_symbol) == 8);

    SUBCASE("temperature zero is greedy argmax over full recomputation") {
        DecodeConfig dc;
        dc.temperature = 0.0;
        dc.max_tokens = 12;
        const auto out = model.sample(ps, pre, dc);
        std::vector<int> greedy;
        for (std::size_t step = 0; step < 12; ++step) {
            auto s = pre;
            for (int t : greedy) {
                s.elements.push_back({Kind::Speech, t});
            }
            s.elements.push_back({Kind::Speech, 0}); // placeholder row for the prediction
            s.s = {pre.t.end, s.elements.size()};
            const auto logits = model.forward(ps, s).logits;
            const std::size_t v = cfg.speech_vocab;
            const auto row = logits.data().subspan(greedy.size() * v, v);
            const int next = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            if (next == cfg.eos()) {
                break;
            }
            greedy.push_back(next);
        }
        CHECK(out.tokens == greedy);
        CHECK(out.hidden.rows() == out.tokens.size());
        if (!out.hit_eos) {
            CHECK(out.capped);
        }
    }
    SUBCASE("incremental hidden states match the teacher-forced forward bit-for-bit") {
        DecodeConfig dc;
        dc.seed = 4;
        dc.max_tokens = 10;
        const auto out = model.sample(ps, pre, dc);
        REQUIRE(!out.tokens.empty());
        auto s = pre;
        for (int t : out.tokens) {
            s.elements.push_back({Kind::Speech, t});
        }
        s.s = {pre.t.end, s.elements.size()};
        const auto fwd = model.forward(ps, s);
        for (std::size_t i = 0; i < out.hidden.numel(); ++i) {
            CHECK(out.hidden.data()[i] == fwd.hidden.data()[i]);
        }
    }
    SUBCASE("same seed, same output; temperature changes nothing about determinism") {
        DecodeConfig dc;
        dc.seed = 77;
        dc.top_k = 4;
        const auto a = model.sample(ps, pre, dc);
        const auto b = model.sample(ps, pre, dc);
        CHECK(a.tokens == b.tokens);
        CHECK(a.tokens.size() <= 32);
        dc.seed = 78;
        const auto c = model.sample(ps, pre, dc);
        dc.seed = 79;
        const auto d = model.sample(ps, pre, dc);
        CHECK((c.tokens != a.tokens || d.tokens != a.tokens));
    }
    SUBCASE("prefix with speech is rejected") {
        auto bad = seq::build_sequence(profiles(2, cfg.d_spk, rng), script, {1}, true);
        CHECK_THROWS_AS(model.sample(ps, bad, {}), std::invalid_argument);
    }
}

TEST_CASE("overlong sequences are rejected") {
    auto cfg = small_config();
    cfg.max_len = 10;
    ArModel model(cfg);
    ParameterStore ps(1);
    model.init(ps);
    Rng rng(1);
    DialogueScript script{{{0, {1, 2, 3}}}, 1};
    const auto s = seq::build_sequence(profiles(1, cfg.d_spk, rng), script, {1, 2, 3, 4, 5, 6, 9}, true);
    CHECK_THROWS_AS(model.forward(ps, s), std::invalid_argument);
}
