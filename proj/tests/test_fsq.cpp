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

#include "jvtoy/fsq.hpp"
#include "jvtoy/ops.hpp"
#include "jvtoy/rng.hpp"

#include <algorithm>
#include <cmath>

using namespace jvtoy;
using namespace jvtoy::fsq;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng &rng, double sd = 1.0, bool grad = false) {
    std::vector<double> v(r * c);
    for (auto &x : v) {
        x = sd * rng.normal();
    }
    return Tensor::from({r, c}, std::move(v), grad);
}

// Class-patterned frames: each token window is a fixed random pattern for its
// label plus a little noise.
std::vector<TokenizerExample> pattern_batch(std::size_t classes, std::size_t factor, std::size_t d, std::size_t n,
                                            std::uint64_t seed) {
    Rng proto(99);
    std::vector<double> patterns(classes * factor * d);
    for (auto &x : patterns) {
        x = proto.normal();
    }
    Rng rng(seed);
    std::vector<TokenizerExample> out;
    for (std::size_t e = 0; e < n; ++e) {
        const std::size_t tokens = 3 + rng.uniform_int(3);
        std::vector<double> frames;
        TokenizerExample ex;
        for (std::size_t k = 0; k < tokens; ++k) {
            const std::size_t c = rng.uniform_int(classes);
            ex.labels.push_back(c);
            for (std::size_t i = 0; i < factor * d; ++i) {
                frames.push_back(patterns[c * factor * d + i] + 0.1 * rng.normal());
            }
        }
        ex.frames = Tensor::from({tokens * factor, d}, std::move(frames));
        out.push_back(std::move(ex));
    }
    return out;
}

} // namespace

TEST_CASE("quantize: origin maps to codebook centre") {
    FsqConfig cfg;
    cfg.levels = {3, 3};
    CHECK(cfg.codebook_size() == 9);
    const auto q = quantize(Tensor::zeros({1, 2}), cfg);
    CHECK(q.values.data()[0] == 0.0);
    CHECK(q.values.data()[1] == 0.0);
    CHECK(q.codes[0].digits == std::vector<int>{1, 1});
    CHECK(q.codes[0].index == 4);
    CHECK_THROWS_AS(quantize(Tensor::zeros({1, 3}), cfg), ShapeError);
}

TEST_CASE("config validation") {
    FsqConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.levels = {4, 5};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.levels = {1};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.levels = {5};
    cfg.downsample_factor = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.downsample_factor = 4;
    cfg.beta = -0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("digit/index bijection is exhaustive for codebooks up to 4096") {
    const std::vector<std::vector<int>> configs{{3, 3}, {5, 5, 5}, {7, 5, 5, 3}, {3, 3, 3, 3, 3, 3, 3}, {9, 9, 7, 7},
                                                {15, 15, 15}};
    for (const auto &levels : configs) {
        std::size_t size = 1;
        for (int l : levels) {
            size *= static_cast<std::size_t>(l);
        }
        REQUIRE(size <= 4096);
        // odometer over digits, first dimension spinning fastest
        std::vector<int> digits(levels.size(), 0);
        std::vector<bool> seen(size, false);
        for (std::size_t k = 0; k < size; ++k) {
            const std::size_t idx = digits_to_index(digits, levels);
            CHECK(idx == k);
            CHECK(index_to_digits(idx, levels) == digits);
            seen[idx] = true;
            for (std::size_t i = 0; i < digits.size(); ++i) {
                if (++digits[i] < levels[i]) {
                    break;
                }
                digits[i] = 0;
            }
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
        CHECK_THROWS_AS(index_to_digits(size, levels), std::out_of_range);
    }
}

TEST_CASE("quantizer output is a fixed point for levels up to 5") {
    for (const std::vector<int> &levels : {std::vector<int>{3, 3}, std::vector<int>{5, 5, 5}, std::vector<int>{3, 5, 5, 3}}) {
        FsqConfig cfg;
        cfg.levels = levels;
        Rng rng(3);
        const Tensor z = random_matrix(200, levels.size(), rng, 2.0);
        const auto q1 = quantize(z, cfg);
        const auto q2 = quantize(q1.values, cfg);
        for (std::size_t i = 0; i < q1.values.numel(); ++i) {
            CHECK(q2.values.data()[i] == q1.values.data()[i]);
        }
        for (std::size_t r = 0; r < q1.codes.size(); ++r) {
            CHECK(q2.codes[r].index == q1.codes[r].index);
        }
        // every grid point reached by the codebook is itself fixed
        for (std::size_t idx = 0; idx < cfg.codebook_size(); ++idx) {
            const auto v = code_values(idx, levels);
            const auto q = quantize(Tensor::from({1, v.size()}, v), cfg);
            CHECK(q.codes[0].index == idx);
        }
    }
}

TEST_CASE("straight-through gradient equals the tanh surrogate") {
    FsqConfig cfg;
    Rng rng(11);
    const Tensor z = random_matrix(16, 3, rng, 1.5, true);
    const Tensor w = random_matrix(16, 3, rng);
    backward(sum(mul(quantize(z, cfg).values, w)));
    const std::vector<double> g_ste(z.grad().begin(), z.grad().end());
    const Tensor z2 = Tensor::from(z.shape(), std::vector<double>(z.data().begin(), z.data().end()), true);
    backward(sum(mul(jvtoy::tanh(z2), w)));
    double worst = 0.0, scale_ref = 0.0;
    for (std::size_t i = 0; i < g_ste.size(); ++i) {
        worst = std::max(worst, std::abs(g_ste[i] - z2.grad()[i]));
        scale_ref = std::max(scale_ref, std::abs(z2.grad()[i]));
    }
    CHECK(worst / scale_ref < 1e-5);
}

TEST_CASE("token count law") {
    for (int factor : {4, 8}) {
        TokenizerConfig tc;
        tc.fsq.downsample_factor = factor;
        Tokenizer tok(tc);
        ParameterStore ps(1);
        tok.init(ps);
        Rng rng(factor);
        for (std::size_t t = 1; t <= 100; ++t) {
            const auto tokens = tok.tokenize(ps, random_matrix(t, tc.d_in, rng));
            CHECK(tokens.size() == (t + factor - 1) / factor);
            for (auto k : tokens) {
                CHECK(k < tc.fsq.codebook_size());
            }
        }
        CHECK_THROWS_AS(tok.tokenize(ps, Tensor::zeros({0, tc.d_in})), std::invalid_argument);
    }
    TokenizerConfig tc;
    tc.fsq.downsample_factor = 4;
    Tokenizer tok(tc);
    ParameterStore ps(2);
    tok.init(ps);
    Rng rng(5);
    CHECK(tok.tokenize(ps, random_matrix(32, 8, rng)).size() == 8);
    const Tensor f33 = random_matrix(33, 8, rng);
    const auto t33 = tok.tokenize(ps, f33);
    CHECK(t33.size() == 9);
    // the padded window equals an explicit copy of the last frame, three more times
    std::vector<double> padded(f33.data().begin(), f33.data().end());
    for (int i = 0; i < 3; ++i) {
        padded.insert(padded.end(), f33.data().end() - 8, f33.data().end());
    }
    CHECK(tok.tokenize(ps, Tensor::from({36, 8}, padded)) == t33);
    TokenizerConfig t8;
    t8.fsq.downsample_factor = 8;
    Tokenizer tok8(t8);
    ParameterStore ps8(2);
    tok8.init(ps8);
    CHECK(tok8.tokenize(ps8, random_matrix(32, 8, rng)).size() == 4);
}

TEST_CASE("tokenizer loss composition") {
    TokenizerConfig tc;
    tc.fsq.downsample_factor = 4;
    tc.n_classes = 6;
    const auto batch = pattern_batch(6, 4, 8, 4, 1);
    ParameterStore ps(4);
    {
        tc.fsq.beta = 0.0;
        Tokenizer tok(tc);
        tok.init(ps);
        const auto l = tok.loss(ps, batch);
        CHECK(l.total.item() == l.semantic.item());
    }
    tc.fsq.beta = 0.7;
    Tokenizer tok(tc);
    const auto l = tok.loss(ps, batch);
    CHECK(l.total.item() == doctest::Approx(l.semantic.item() + 0.7 * l.recon.item()).epsilon(1e-6));
    CHECK(l.semantic.item() >= 0.0);
    CHECK(l.recon.item() >= 0.0);
    auto bad = batch;
    bad[0].labels.pop_back();
    CHECK_THROWS_AS(tok.loss(ps, bad), ShapeError);
    tc.fsq.beta = -1.0;
    CHECK_THROWS_AS(Tokenizer{tc}, std::invalid_argument);
}

TEST_CASE("tokenizer training drops the combined loss by at least 30% in 200 steps") {
    TokenizerConfig tc;
    tc.fsq.downsample_factor = 8;
    tc.n_classes = 16;
    Tokenizer tok(tc);
    ParameterStore ps(7);
    tok.init(ps);
    ps.set_requires_grad(true);
    AdamW opt;
    const auto eval_batch = pattern_batch(16, 8, 8, 16, 1000);
    const double before = tok.loss(ps, eval_batch).total.item();
    for (int step = 0; step < 200; ++step) {
        const auto batch = pattern_batch(16, 8, 8, 8, static_cast<std::uint64_t>(step));
        ps.zero_grad();
        backward(tok.loss(ps, batch).total);
        opt.step(ps, 3e-3);
    }
    const double after = tok.loss(ps, eval_batch).total.item();
    MESSAGE("tokenizer loss " << before << " -> " << after);
    CHECK(after <= 0.7 * before);
}
