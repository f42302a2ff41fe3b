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

#include "jvtoy/flowmatch.hpp"
#include "jvtoy/ops.hpp"

#include <cmath>

using namespace jvtoy;
using namespace jvtoy::fm;

namespace {

FlowConfig small_config() {
    FlowConfig c;
    c.d_mel = 3;
    c.d_cond = 5;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 16;
    c.time_dim = 8;
    c.frames_per_token = 2;
    return c;
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng &rng, bool grad = false) {
    std::vector<double> v(r * c);
    for (auto &x : v) {
        x = rng.normal();
    }
    return Tensor::from({r, c}, std::move(v), grad);
}

bool rows_equal(const Tensor &a, const Tensor &b, std::size_t row) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
        if (a.at(row, j) != b.at(row, j)) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("chunk mask equals the floor formula for every T, c <= 16") {
    for (std::size_t t = 1; t <= 16; ++t) {
        for (std::size_t c = 1; c <= 16; ++c) {
            const auto m = make_chunk_mask(t, c);
            REQUIRE(m.rows() == t);
            for (std::size_t i = 0; i < t; ++i) {
                for (std::size_t j = 0; j < t; ++j) {
                    CHECK(m.allowed(i, j) == (j / c <= i / c));
                    // symmetric inside a chunk block
                    if (i / c == j / c) {
                        CHECK(m.allowed(i, j));
                        CHECK(m.allowed(j, i));
                    }
                }
            }
            if (c >= t) {
                CHECK(m == AttentionMask::full(t));
            }
            // nesting holds when c divides c2 (or c2 covers the sequence)
            for (std::size_t c2 = c; c2 <= 16; ++c2) {
                if (c2 % c != 0 && c2 < t) {
                    continue;
                }
                const auto m2 = make_chunk_mask(t, c2);
                for (std::size_t i = 0; i < t; ++i) {
                    for (std::size_t j = 0; j < t; ++j) {
                        if (m.allowed(i, j)) {
                            CHECK(m2.allowed(i, j));
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("chunk mask worked examples") {
    const auto m = make_chunk_mask(4, 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(m.allowed(i, 0));
        CHECK(m.allowed(i, 1));
        CHECK_FALSE(m.allowed(i, 2));
        CHECK_FALSE(m.allowed(i, 3));
    }
    for (std::size_t i = 2; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(m.allowed(i, j));
        }
    }
    CHECK(make_chunk_mask(3, 1) == AttentionMask::causal(3));
    // without divisibility the masks are not nested: row 2 sees column 3 at c=2 only
    CHECK(make_chunk_mask(4, 2).allowed(2, 3));
    CHECK_FALSE(make_chunk_mask(4, 3).allowed(2, 3));
    CHECK(make_chunk_mask(4, 9) == AttentionMask::full(4));
    CHECK_THROWS_AS(make_chunk_mask(0, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_chunk_mask(3, 0), std::invalid_argument);
}

TEST_CASE("interpolate") {
    Rng rng(1);
    const Tensor x0 = random_matrix(3, 2, rng);
    const Tensor x1 = random_matrix(3, 2, rng);
    const Tensor a = interpolate(x0, x1, 0.0);
    const Tensor b = interpolate(x0, x1, 1.0);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(a.data()[i] == x0.data()[i]);
        CHECK(b.data()[i] == x1.data()[i]);
    }
    const Tensor mid = interpolate(Tensor::zeros({1, 2}), Tensor::from({1, 2}, {2.0, 4.0}), 0.5);
    CHECK(mid.data()[0] == 1.0);
    CHECK(mid.data()[1] == 2.0);
    CHECK_THROWS_AS(interpolate(x0, x1, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(interpolate(x0, x1, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(interpolate(x0, random_matrix(2, 2, rng), 0.3), ShapeError);
}

TEST_CASE("forward respects the mask and the shape law") {
    const auto cfg = small_config();
    FlowModel model(cfg);
    ParameterStore ps(4);
    model.init(ps);
    Rng rng(9);
    for (std::size_t tokens : {1u, 3u, 6u}) {
        const std::size_t frames = tokens * cfg.frames_per_token;
        const Tensor cond = model.upsample(random_matrix(tokens, cfg.d_cond, rng));
        const Tensor x = random_matrix(frames, cfg.d_mel, rng);
        for (std::size_t c : {1u, 2u, 3u, 4u, 16u}) {
            const auto mask = make_chunk_mask(frames, c);
            const Tensor v = model.forward(ps, x, {0.3}, cond, mask);
            CHECK(v.shape() == Shape{frames, cfg.d_mel});
            // perturb one frame and one conditioning row at p
            for (std::size_t p = 0; p < frames; ++p) {
                std::vector<double> xv(x.data().begin(), x.data().end());
                std::vector<double> cv(cond.data().begin(), cond.data().end());
                xv[p * cfg.d_mel] += 1.0;
                cv[p * cfg.d_cond + 1] -= 1.0;
                const Tensor v2 = model.forward(ps, Tensor::from(x.shape(), xv), {0.3},
                                                Tensor::from(cond.shape(), cv), mask);
                for (std::size_t i = 0; i < frames; ++i) {
                    if (!mask.allowed(i, p)) {
                        CHECK(rows_equal(v, v2, i));
                    }
                }
            }
        }
        const Tensor full = model.forward(ps, x, {0.7}, cond, AttentionMask::full(frames));
        const Tensor big = model.forward(ps, x, {0.7}, cond, make_chunk_mask(frames, frames + 3));
        for (std::size_t i = 0; i < frames; ++i) {
            CHECK(rows_equal(full, big, i));
        }
    }
    CHECK_THROWS_AS(model.forward(ps, random_matrix(4, cfg.d_mel, rng), {0.1},
                                  model.upsample(random_matrix(3, cfg.d_cond, rng)), make_chunk_mask(4, 2)),
                    ShapeError);
}

TEST_CASE("streaming forward equals the one-shot masked forward bit-for-bit") {
    const auto cfg = small_config();
    FlowModel model(cfg);
    ParameterStore ps(5);
    model.init(ps);
    Rng rng(10);
    const std::size_t frames = 14;
    const Tensor cond = model.upsample(random_matrix(7, cfg.d_cond, rng));
    const Tensor x = random_matrix(frames, cfg.d_mel, rng);
    for (std::size_t c : {1u, 2u, 3u, 4u, 5u, 8u, 14u}) {
        const Tensor one = model.forward(ps, x, {0.25}, cond, make_chunk_mask(frames, c));
        StreamState st;
        std::vector<Tensor> pieces;
        for (std::size_t s = 0; s < frames; s += c) {
            const std::size_t n = std::min(c, frames - s);
            pieces.push_back(model.forward_stream(ps, slice_rows(x, s, n), {0.25}, slice_rows(cond, s, n), c, st));
        }
        const Tensor inc = concat_rows(pieces);
        for (std::size_t i = 0; i < frames; ++i) {
            CHECK(rows_equal(one, inc, i));
        }
    }
    for (std::size_t c : {2u, 4u, 5u}) {
        const Tensor h = random_matrix(7, cfg.d_cond, rng);
        const Tensor a = model.sample(ps, h, make_chunk_mask(frames, c), 4, 3);
        const Tensor b = model.sample_streaming(ps, h, c, 4, 3);
        for (std::size_t i = 0; i < frames; ++i) {
            CHECK(rows_equal(a, b, i));
        }
    }
}

TEST_CASE("loss plug-in values and Euler exactness for a constant field") {
    const auto cfg = small_config();
    FlowModel model(cfg);
    ParameterStore ps(6);
    model.init(ps);
    // zero output layer: v == bias
    std::vector<double> zeros(cfg.d_model * cfg.d_mel, 0.0);
    ps.assign("fm.out.w", Tensor::from({cfg.d_model, cfg.d_mel}, zeros));
    Rng data(2);
    const Tensor h = random_matrix(3, cfg.d_cond, data);
    const Tensor x1 = random_matrix(6, cfg.d_mel, data);
    const auto mask = make_chunk_mask(6, 2);
    Rng rng(77), replay(77);
    const double l = model.loss(ps, x1, h, mask, rng).item();
    double want = 0.0;
    for (std::size_t i = 0; i < x1.numel(); ++i) {
        const double x0 = static_cast<double>(static_cast<float>(replay.normal()));
        want += (x1.data()[i] - x0) * (x1.data()[i] - x0);
    }
    CHECK(l == doctest::Approx(want / static_cast<double>(x1.numel())).epsilon(1e-6));

    // v == c everywhere; one Euler step from x0 lands on x0 + c
    const std::vector<double> c{0.5, -0.25, 2.0};
    ps.assign("fm.out.b", Tensor::from({cfg.d_mel}, c));
    const Tensor start = model.sample(ps, h, mask, 1, 8);
    ps.assign("fm.out.b", Tensor::from({cfg.d_mel}, {0.0, 0.0, 0.0}));
    const Tensor x0 = model.sample(ps, h, mask, 1, 8);
    for (std::size_t i = 0; i < x0.numel(); ++i) {
        CHECK(start.data()[i] == doctest::Approx(x0.data()[i] + c[i % 3]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(model.sample(ps, h, mask, 0, 8), std::invalid_argument);
}

TEST_CASE("L_FM passes grad_check at 1e-3 including the conditioning path") {
    const auto cfg = small_config();
    FlowModel model(cfg);
    ParameterStore ps(12);
    model.init(ps);
    ps.add("h", {3, cfg.d_cond});
    Rng data(3);
    const Tensor x1 = random_matrix(6, cfg.d_mel, data);
    const auto mask = make_chunk_mask(6, 4);
    const auto report = grad_check(
        [&](const ParameterStore &p) {
            Rng rng(31);
            return model.loss(p, x1, p.get("h"), mask, rng);
        },
        ps, 1e-3);
    for (const auto &e : report.entries) {
        INFO(e.name << " rel " << e.max_rel_err);
        CHECK(e.pass);
    }
}

TEST_CASE("chunk draws cover the configured choices") {
    FlowModel model(small_config());
    Rng rng(1);
    std::vector<int> seen(21, 0);
    for (int i = 0; i < 500; ++i) {
        ++seen[model.draw_chunk(20, rng)];
    }
    for (std::size_t c : {1u, 2u, 4u, 8u, 20u}) {
        CHECK(seen[c] > 50);
    }
    CHECK(model.draw_chunk(3, rng) <= 3);
}
