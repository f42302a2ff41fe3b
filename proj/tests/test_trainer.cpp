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

#include "jvtoy/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <sstream>

using namespace jvtoy;
using namespace jvtoy::train;

namespace {

RunConfig tiny_config() {
    RunConfig c;
    c.am.d_model = 8;
    c.am.n_layers = 1;
    c.am.n_heads = 2;
    c.am.d_ff = 16;
    c.fm.d_model = 8;
    c.fm.n_layers = 1;
    c.fm.n_heads = 2;
    c.fm.d_ff = 16;
    c.fm.time_dim = 8;
    c.world.stage1_min_len = 2;
    c.world.stage1_max_len = 3;
    c.world.max_speakers = 3;
    c.world.max_turns = 3;
    c.world.stage2_min_turn = 1;
    c.world.stage2_max_turn = 2;
    c.batch_size = 2;
    c.stage1_steps = 3;
    c.stage2_steps = 2;
    c.warmup_steps = 2;
    c.resolve();
    return c;
}

using GradMap = std::map<std::string, std::vector<double>>;

GradMap grads_of(const ParameterStore &ps) {
    GradMap out;
    for (const auto &[name, t] : ps.entries()) {
        out[name] = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                 : std::vector<double>(t.numel(), 0.0);
    }
    return out;
}

enum class Term { Total, Am, Fm };

GradMap grads_for(const Models &m, ParameterStore &ps, const std::vector<toy::Sample> &batch, double lambda, Mode mode,
                  Term which) {
    ps.zero_grad();
    Rng rng(99);
    const auto terms = joint_loss(m, ps, batch, lambda, mode, rng);
    backward(which == Term::Total ? terms.total : which == Term::Am ? terms.l_am : terms.l_fm);
    return grads_of(ps);
}

bool is_am(const std::string &name) { return name.rfind("am.", 0) == 0; }

std::vector<toy::Sample> fixed_batch(const Models &m) {
    return {m.world.sample(toy::Stage::One, toy::Split::Train, 1), m.world.sample(toy::Stage::Two, toy::Split::Train, 2)};
}

} // namespace

TEST_CASE("lr_at: warmup ramp, cosine decay, range check") {
    const double peak = 2e-3;
    CHECK(lr_at(0, 100, 1000, peak) == 0.0);
    CHECK(lr_at(50, 100, 1000, peak) == doctest::Approx(peak / 2));
    CHECK(lr_at(100, 100, 1000, peak) == doctest::Approx(peak));
    CHECK(lr_at(550, 100, 1000, peak) == doctest::Approx(peak * (1 + std::cos(std::numbers::pi / 2)) / 2));
    CHECK(lr_at(550, 100, 1000, peak) == doctest::Approx(peak / 2));
    CHECK(lr_at(1000, 100, 1000, peak) == doctest::Approx(0.0).epsilon(1e-12));
    for (std::size_t s = 101; s <= 1000; ++s) {
        CHECK(lr_at(s, 100, 1000, peak) <= lr_at(s - 1, 100, 1000, peak));
    }
    CHECK_THROWS_AS(lr_at(1001, 100, 1000, peak), std::out_of_range);
}

TEST_CASE("joint loss gradient is linear in lambda") {
    Float64Scope f64;
    const auto cfg = tiny_config();
    Models m(cfg);
    auto ps = m.make_params(3);
    const auto batch = fixed_batch(m);
    for (double lambda : {0.1, 1.0, 2.5}) {
        const auto total = grads_for(m, ps, batch, lambda, Mode::E2E, Term::Total);
        const auto am = grads_for(m, ps, batch, lambda, Mode::E2E, Term::Am);
        const auto fm = grads_for(m, ps, batch, lambda, Mode::E2E, Term::Fm);
        for (const auto &[name, g] : total) {
            double gmax = 0.0, err = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double expect = am.at(name)[i] + lambda * fm.at(name)[i];
                gmax = std::max(gmax, std::abs(expect));
                err = std::max(err, std::abs(g[i] - expect));
            }
            // mathematically-zero entries carry ~1e-21 cancellation noise
            CHECK_MESSAGE(err <= 1e-9 * gmax + 1e-15, name);
        }
    }
}

TEST_CASE("loss value is exactly L_AM + lambda L_FM") {
    const auto cfg = tiny_config();
    Models m(cfg);
    auto ps = m.make_params(3);
    const auto batch = fixed_batch(m);
    Float64Scope f64;
    Rng rng(5);
    const auto t = joint_loss(m, ps, batch, 0.5, Mode::E2E, rng);
    CHECK(t.total.item() == t.l_am.item() + 0.5 * t.l_fm.item());
}

TEST_CASE("gradient routing: lambda 0, cascade and e2e") {
    const auto cfg = tiny_config();
    Models m(cfg);
    auto ps = m.make_params(4);
    const auto batch = fixed_batch(m);

    const auto l0 = grads_for(m, ps, batch, 0.0, Mode::E2E, Term::Total);
    const auto am_only = grads_for(m, ps, batch, 0.0, Mode::E2E, Term::Am);
    const auto cascade = grads_for(m, ps, batch, 1.0, Mode::Cascade, Term::Total);
    const auto e2e = grads_for(m, ps, batch, 1.0, Mode::E2E, Term::Total);
    const auto cascade_fm = grads_for(m, ps, batch, 1.0, Mode::Cascade, Term::Fm);

    bool some_am_differs = false;
    for (const auto &[name, g] : l0) {
        if (is_am(name)) {
            CHECK_MESSAGE(g == am_only.at(name), name);
            CHECK_MESSAGE(cascade.at(name) == g, name);
            for (double v : cascade_fm.at(name)) {
                REQUIRE(v == 0.0);
            }
            some_am_differs = some_am_differs || e2e.at(name) != g;
        } else {
            CHECK_MESSAGE(cascade.at(name) == e2e.at(name), name);
        }
    }
    CHECK(some_am_differs);
}

TEST_CASE("stage-1 stream is single-speaker and short") {
    auto cfg = tiny_config();
    cfg.stage1_steps = 2500;
    cfg.batch_size = 4;
    Models m(cfg);
    auto ps = m.make_params(1);
    Trainer tr(m, TrainConfig::from(cfg), ps);
    std::size_t n = 0;
    for (std::size_t step = 0; step < cfg.stage1_steps; ++step) {
        for (const auto &s : tr.batch(0, step)) {
            REQUIRE(s.script.num_speakers == 1);
            REQUIRE(s.script.turns.size() == 1);
            REQUIRE(s.script.text_length() <= cfg.world.stage1_max_len);
            ++n;
        }
    }
    CHECK(n == 10000);
    bool multi = false;
    for (std::size_t step = 0; step < 20 && !multi; ++step) {
        for (const auto &s : tr.batch(1, step)) {
            multi = multi || s.script.num_speakers > 1;
        }
    }
    CHECK(multi);
}

TEST_CASE("checkpoint round trip resumes bit-for-bit") {
    const auto cfg = tiny_config();
    Models m(cfg);
    const auto dir = std::filesystem::temp_directory_path() / "jvtoy_test_trainer_ckpt";
    std::filesystem::remove_all(dir);

    auto ps_a = m.make_params(7);
    Trainer a(m, TrainConfig::from(cfg), ps_a);
    std::vector<StepRecord> ra;
    for (int i = 0; i < 4; ++i) {
        ra.push_back(a.step()); // crosses the stage boundary after step 3
    }

    for (int split : {1, 2, 3}) {
        auto ps_b = m.make_params(7);
        Trainer b(m, TrainConfig::from(cfg), ps_b);
        for (int i = 0; i < split; ++i) {
            b.step();
        }
        b.save(dir / "mid");
        auto ps_c = m.make_params(12345); // different init, fully overwritten by load
        Trainer c(m, TrainConfig::from(cfg), ps_c);
        c.load(dir / "mid");
        CHECK(c.global_step() == static_cast<std::size_t>(split));
        std::vector<StepRecord> rc;
        while (c.global_step() < 4) {
            rc.push_back(c.step());
        }
        for (std::size_t i = 0; i < rc.size(); ++i) {
            CHECK(metrics_line(rc[i]) == metrics_line(ra[split + i]));
        }
        for (const auto &[name, t] : ps_a.entries()) {
            const auto tc = ps_c.get(name);
            REQUIRE(std::equal(t.data().begin(), t.data().end(), tc.data().begin()));
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("train writes metrics and stage checkpoints, reruns are identical") {
    const auto cfg = tiny_config();
    Models m(cfg);
    const auto dir = std::filesystem::temp_directory_path() / "jvtoy_test_trainer_run";
    std::filesystem::remove_all(dir);
    std::string logs[2];
    for (auto &log : logs) {
        auto ps = m.make_params(cfg.seed);
        std::ostringstream out;
        const auto res = train::train(m, TrainConfig::from(cfg), ps, dir, &out);
        CHECK(res.log.size() == 5);
        log = out.str();
    }
    CHECK(logs[0] == logs[1]);
    CHECK(logs[0].rfind("step\tloss\tl_am\tl_fm\tlr\n", 0) == 0);
    CHECK(std::count(logs[0].begin(), logs[0].end(), '\n') == 6);
    CHECK(std::filesystem::exists(dir / "checkpoints" / "stage1.manifest"));
    CHECK(std::filesystem::exists(dir / "checkpoints" / "stage2.manifest"));
    CHECK(std::filesystem::exists(dir / "checkpoints" / "final.manifest"));

    // schedule restarts at stage 2: its first lr is the warmup ramp again
    std::istringstream in(logs[0]);
    std::string line;
    std::vector<double> lrs;
    std::getline(in, line);
    while (std::getline(in, line)) {
        lrs.push_back(std::stod(line.substr(line.rfind('\t') + 1)));
    }
    CHECK(lrs[0] == doctest::Approx(cfg.peak_lr / 2));
    CHECK(lrs[3] == doctest::Approx(cfg.peak_lr / 2));
    std::filesystem::remove_all(dir);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    const auto cfg = tiny_config();
    Models m(cfg);
    auto ps = m.make_params(1);
    auto w = ps.get("fm.out.w");
    w.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    Trainer tr(m, TrainConfig::from(cfg), ps);
    try {
        tr.step();
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss &e) {
        CHECK(std::string(e.what()).find("stage1 step 1") != std::string::npos);
    }
}

TEST_CASE("toy run of 500 steps brings L_AM below ln(V)/2") {
    auto cfg = tiny_config();
    cfg.am.d_model = 32;
    cfg.am.n_layers = 2;
    cfg.am.n_heads = 4;
    cfg.am.d_ff = 64;
    cfg.world = toy::WorldConfig{};
    cfg.stage1_steps = 500;
    cfg.stage2_steps = 0;
    cfg.batch_size = 4;
    cfg.warmup_steps = 50;
    cfg.resolve();
    Models m(cfg);
    auto ps = m.make_params(cfg.seed);
    const auto res = train::train(m, TrainConfig::from(cfg), ps, {}, nullptr);
    double tail = 0.0;
    for (std::size_t i = res.log.size() - 20; i < res.log.size(); ++i) {
        tail += res.log[i].l_am / 20.0;
    }
    MESSAGE("mean L_AM over the last 20 steps: " << tail);
    CHECK(tail < std::log(static_cast<double>(cfg.am.speech_vocab)) / 2);
}
