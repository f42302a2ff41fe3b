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

// Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Progress goes to stderr.

#include "cli.hpp"

#include "jvtoy/config.hpp"
#include "jvtoy/evalkit.hpp"
#include "jvtoy/flowmatch.hpp"
#include "jvtoy/fsq.hpp"
#include "jvtoy/ops.hpp"
#include "jvtoy/pipeline.hpp"
#include "jvtoy/preference.hpp"
#include "jvtoy/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace jvtoy;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename... A>
std::string fmt(const char *f, A... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// Tolerances and budgets pinned here.
constexpr double kGradTol = 1e-3;
constexpr std::size_t kGradMaxParams = 5000;
constexpr double kGradMaxSeconds = 60.0;
constexpr double kGmmMeanTol = 0.1;
constexpr double kGmmCovTol = 0.15;
constexpr double kEulerTol = 0.1;
constexpr double kSteTol = 1e-5;
constexpr double kLn2Tol = 1e-6;
constexpr double kCpcerMax = 0.10;
constexpr double kSpeakerAccMin = 0.90;
constexpr double kTrainBudgetSeconds = 15 * 60.0;

// Ablation runs behind the e2e-vs-cascade and compression criteria.
constexpr std::size_t kAblationSteps = 1500;
constexpr std::size_t kAblationBatch = 8;
constexpr std::uint64_t kAblationSeeds[] = {1, 2, 3};
constexpr std::size_t kAblationPrompts = 32;

// The multi-speaker criterion uses the default config (2000 + 1000 steps, batch 12).
constexpr std::size_t kHeldoutScripts = 20;

struct Context {
    fs::path work;
    RunConfig cfg;
    std::optional<train::Models> models;
    std::optional<ParameterStore> params;
    double train_seconds = 0.0;
};

void progress(const std::string &msg) { std::cerr << "[acceptance] " << msg << std::endl; }

RunConfig toy_config() {
    RunConfig c;
    c.resolve();
    return c;
}

// The two-stage toy model, trained on first use.
void ensure_model(Context &ctx) {
    if (ctx.params) {
        return;
    }
    ctx.cfg = toy_config();
    ctx.models.emplace(ctx.cfg);
    ctx.params.emplace(ctx.models->make_params(ctx.cfg.seed));
    progress(fmt("training two-stage model (%zu + %zu steps)", ctx.cfg.stage1_steps, ctx.cfg.stage2_steps));
    const auto t0 = Clock::now();
    const fs::path dir = ctx.work / "two_stage";
    fs::create_directories(dir);
    std::ofstream metrics(dir / "metrics.tsv");
    metrics << train::kMetricsHeader << '\n';
    train::train(*ctx.models, train::TrainConfig::from(ctx.cfg), *ctx.params, dir, &metrics);
    ctx.train_seconds = seconds_since(t0);
    progress(fmt("two-stage model trained in %.0f s", ctx.train_seconds));
}

// ---- 1: gradient integrity ----

Outcome gradient_integrity(Context &) {
    const auto t0 = Clock::now();
    const auto suite = pipe::gradcheck_suite(kGradTol);
    const double secs = seconds_since(t0);
    bool ok = secs < kGradMaxSeconds && suite.size() == 3;
    std::string detail;
    for (const auto &c : suite) {
        ok = ok && c.report.pass && c.parameters <= kGradMaxParams;
        detail += fmt("%s rel %.2e; ", c.name.c_str(), c.report.worst_rel_err);
    }
    const std::size_t params = suite.empty() ? 0 : suite.front().parameters;
    return {ok, detail + fmt("%zu params, %.1f s (tol %.0e)", params, secs, kGradTol)};
}

// ---- 2: severance ----

std::map<std::string, std::vector<double>> grads_of(const ParameterStore &ps) {
    std::map<std::string, std::vector<double>> out;
    for (const auto &[name, t] : ps.entries()) {
        out[name] = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                 : std::vector<double>(t.numel(), 0.0);
    }
    return out;
}

Outcome severance(Context &) {
    const auto cfg = pipe::gradcheck_config();
    train::Models m(cfg);
    auto ps = m.make_params(4);
    const std::vector<toy::Sample> batch{m.world.sample(toy::Stage::One, toy::Split::Train, 1),
                                         m.world.sample(toy::Stage::Two, toy::Split::Train, 2)};
    auto run = [&](double lambda, Mode mode, bool fm_only) {
        ps.zero_grad();
        Rng rng(99);
        const auto terms = train::joint_loss(m, ps, batch, lambda, mode, rng);
        backward(fm_only ? terms.l_fm : terms.total);
        return grads_of(ps);
    };
    const auto cascade_fm = run(1.0, Mode::Cascade, true);
    const auto e2e = run(1.0, Mode::E2E, false);
    const auto zero = run(0.0, Mode::E2E, false);

    std::size_t am_tensors = 0, nonzero = 0, differing = 0;
    for (const auto &[name, g] : cascade_fm) {
        if (name.rfind("am.", 0) != 0) {
            continue;
        }
        ++am_tensors;
        nonzero += std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; }) ? 1 : 0;
        differing += e2e.at(name) != zero.at(name) ? 1 : 0;
    }
    const bool ok = am_tensors > 0 && nonzero == 0 && differing > 0;
    return {ok, fmt("cascade dL_FM/dAM nonzero in %zu of %zu AM tensors; e2e vs lambda 0 differs in %zu", nonzero,
                    am_tensors, differing)};
}

// ---- 3 and 4: ablations ----

struct AblationResult {
    double frame_cer = 0.0;
    double fm_loss = 0.0;
};

AblationResult ablation_run(Context &ctx, int factor, Mode mode, std::uint64_t seed) {
    static std::map<std::tuple<int, int, std::uint64_t>, AblationResult> cache;
    const auto key = std::tuple{factor, mode == Mode::E2E ? 1 : 0, seed};
    if (auto it = cache.find(key); it != cache.end()) {
        return it->second;
    }
    RunConfig cfg;
    cfg.seed = seed;
    cfg.mode = mode;
    cfg.fsq.downsample_factor = factor;
    cfg.batch_size = kAblationBatch;
    cfg.stage1_steps = kAblationSteps;
    cfg.stage2_steps = 0;
    cfg.eval_prompts = kAblationPrompts;
    cfg.eval_loss_samples = kAblationPrompts;
    cfg.resolve();
    train::Models m(cfg);
    auto ps = m.make_params(seed);
    const auto t0 = Clock::now();
    train::train(m, train::TrainConfig::from(cfg), ps, {}, nullptr);
    const auto r = pipe::evaluate(m, ps, cfg);
    const AblationResult out{r.frame_cer, r.fm_loss};
    progress(fmt("ablation f%d %s seed %llu: cer %.4f l_fm %.4f (%.0f s)", factor, mode == Mode::E2E ? "e2e" : "cascade",
                 static_cast<unsigned long long>(seed), out.frame_cer, out.fm_loss, seconds_since(t0)));
    (void)ctx;
    cache[key] = out;
    return out;
}

constexpr int kDirectionFactor = 8;

Outcome e2e_direction(Context &ctx) {
    int wins = 0;
    double cer_e = 0, cer_c = 0, fm_e = 0, fm_c = 0;
    std::string per_seed;
    for (auto seed : kAblationSeeds) {
        const auto e = ablation_run(ctx, kDirectionFactor, Mode::E2E, seed);
        const auto c = ablation_run(ctx, kDirectionFactor, Mode::Cascade, seed);
        const bool win = e.frame_cer < c.frame_cer && e.fm_loss < c.fm_loss;
        wins += win ? 1 : 0;
        cer_e += e.frame_cer / 3;
        cer_c += c.frame_cer / 3;
        fm_e += e.fm_loss / 3;
        fm_c += c.fm_loss / 3;
        per_seed += win ? "+" : "-";
    }
    const bool ok = wins >= 2 && cer_e < cer_c && fm_e < fm_c;
    return {ok, fmt("factor %d, seeds %s: mean CER e2e %.4f vs cascade %.4f (gap %.4f), mean L_FM %.4f vs %.4f (gap %.4f)",
                    kDirectionFactor, per_seed.c_str(), cer_e, cer_c, cer_c - cer_e, fm_e, fm_c, fm_c - fm_e)};
}

Outcome compression_robustness(Context &ctx) {
    int wins = 0;
    std::string per_seed;
    double de = 0, dc = 0;
    for (auto seed : kAblationSeeds) {
        const double e = ablation_run(ctx, 8, Mode::E2E, seed).frame_cer - ablation_run(ctx, 4, Mode::E2E, seed).frame_cer;
        const double c =
            ablation_run(ctx, 8, Mode::Cascade, seed).frame_cer - ablation_run(ctx, 4, Mode::Cascade, seed).frame_cer;
        wins += e < c ? 1 : 0;
        per_seed += e < c ? "+" : "-";
        de += e / 3;
        dc += c / 3;
    }
    return {wins >= 2, fmt("CER degradation f8-f4, seeds %s: mean e2e %.4f vs cascade %.4f", per_seed.c_str(), de, dc)};
}

// ---- 5: chunk mask ----

bool rows_equal(const Tensor &a, const Tensor &b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

Outcome chunk_mask_suite(Context &) {
    std::size_t formula_bad = 0, nested_bad = 0, full_bad = 0, cases = 0, non_nested = 0;
    for (std::size_t t = 1; t <= 16; ++t) {
        for (std::size_t c = 1; c <= 16; ++c) {
            const auto m = fm::make_chunk_mask(t, c);
            ++cases;
            for (std::size_t i = 0; i < t; ++i) {
                for (std::size_t j = 0; j < t; ++j) {
                    // frame j is visible once its chunk has started by the end of i's chunk
                    const bool expect = (j / c) * c <= (i / c) * c + c - 1;
                    formula_bad += m.allowed(i, j) != expect ? 1 : 0;
                }
            }
            if (c >= t && !(m == AttentionMask::full(t))) {
                ++full_bad;
            }
            for (std::size_t c2 = c + 1; c2 <= 16; ++c2) {
                const auto m2 = fm::make_chunk_mask(t, c2);
                bool subset = true;
                for (std::size_t i = 0; i < t && subset; ++i) {
                    for (std::size_t j = 0; j < t; ++j) {
                        if (m.allowed(i, j) && !m2.allowed(i, j)) {
                            subset = false;
                            break;
                        }
                    }
                }
                if (c2 % c == 0 || c2 >= t) {
                    nested_bad += subset ? 0 : 1;
                } else {
                    non_nested += subset ? 0 : 1;
                }
            }
        }
    }

    fm::FlowConfig fc;
    fc.d_mel = 3;
    fc.d_cond = 5;
    fc.d_model = 8;
    fc.n_heads = 2;
    fc.d_ff = 16;
    fc.time_dim = 8;
    fc.frames_per_token = 2;
    fm::FlowModel model(fc);
    ParameterStore ps(5);
    model.init(ps);
    Rng rng(10);
    auto random = [&](std::size_t r, std::size_t c) {
        std::vector<double> v(r * c);
        for (auto &x : v) {
            x = rng.normal();
        }
        return Tensor::from({r, c}, v);
    };
    const std::size_t frames = 14;
    const Tensor h = random(7, fc.d_cond);
    const Tensor cond = model.upsample(h);
    const Tensor x = random(frames, fc.d_mel);
    std::size_t stream_bad = 0;
    for (std::size_t c = 1; c <= frames; ++c) {
        const Tensor one = model.forward(ps, x, {0.25}, cond, fm::make_chunk_mask(frames, c));
        fm::StreamState st;
        std::vector<Tensor> pieces;
        for (std::size_t s = 0; s < frames; s += c) {
            const std::size_t n = std::min(c, frames - s);
            pieces.push_back(model.forward_stream(ps, slice_rows(x, s, n), {0.25}, slice_rows(cond, s, n), c, st));
        }
        stream_bad += rows_equal(one, concat_rows(pieces)) ? 0 : 1;
        stream_bad += rows_equal(model.sample(ps, h, fm::make_chunk_mask(frames, c), 4, 3),
                                 model.sample_streaming(ps, h, c, 4, 3))
                          ? 0
                          : 1;
    }
    const bool ok = formula_bad == 0 && nested_bad == 0 && full_bad == 0 && stream_bad == 0;
    return {ok, fmt("%zu (T,c) cases: formula mismatches %zu, nesting failures (c1 | c2 or c2 >= T) %zu, full-mask "
                    "failures %zu, streaming mismatches %zu; non-divisor pairs not nested: %zu (expected, see README)",
                    cases, formula_bad, nested_bad, full_bad, stream_bad, non_nested)};
}

// ---- 6: flow-matching sanity ----

struct Moments {
    double mx, my, cxx, cyy, cxy;
};

Moments moments(const Tensor &s) {
    const std::size_t n = s.rows();
    Moments m{0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        m.mx += s.at(i, 0) / n;
        m.my += s.at(i, 1) / n;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double a = s.at(i, 0) - m.mx, b = s.at(i, 1) - m.my;
        m.cxx += a * a / (n - 1);
        m.cyy += b * b / (n - 1);
        m.cxy += a * b / (n - 1);
    }
    return m;
}

Outcome flow_sanity(Context &ctx) {
    // mixture 0.5 N((-1,0), 0.25 I) + 0.5 N((1,0), 0.25 I): mean 0, cov diag(1.25, 0.25)
    fm::FlowConfig c;
    c.d_mel = 2;
    c.d_cond = 1;
    c.d_model = 32;
    c.n_layers = 2;
    c.n_heads = 1;
    c.d_ff = 64;
    c.time_dim = 16;
    c.frames_per_token = 1;
    fm::FlowModel model(c);
    ParameterStore ps(1);
    model.init(ps);
    ps.set_requires_grad(true);
    AdamW opt;
    Rng rng(5);
    const std::size_t steps = 1000, batch = 256;
    const auto diag = AttentionMask::diagonal(batch);
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<double> xt(batch * 2), tgt(batch * 2), t(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            const double x1[2] = {sign + 0.5 * rng.normal(), 0.5 * rng.normal()};
            t[i] = rng.uniform();
            for (int k = 0; k < 2; ++k) {
                const double x0 = rng.normal();
                xt[2 * i + k] = (1 - t[i]) * x0 + t[i] * x1[k];
                tgt[2 * i + k] = x1[k] - x0;
            }
        }
        ps.zero_grad();
        const Tensor v = model.forward(ps, Tensor::from({batch, 2}, xt), t, Tensor::zeros({batch, 1}), diag);
        backward(mse(v, Tensor::from({batch, 2}, tgt)));
        opt.step(ps, train::lr_at(s + 1, 100, steps, 3e-3));
    }
    auto draw = [&](std::size_t euler) {
        std::vector<Tensor> parts;
        for (std::size_t b = 0; b < 20; ++b) {
            parts.push_back(model.sample(ps, Tensor::zeros({100, 1}), AttentionMask::diagonal(100), euler, 99 + b));
        }
        return concat_rows(parts);
    };
    const auto m100 = moments(draw(100));
    const auto m10 = moments(draw(10));
    auto fro = [](const Moments &m) {
        return std::sqrt(std::pow(m.cxx - 1.25, 2) + std::pow(m.cyy - 0.25, 2) + 2 * m.cxy * m.cxy);
    };
    const double mean_err = std::hypot(m100.mx, m100.my);

    // Euler 10 vs 100 on the toy model: same tokens, same noise. Per sample, the
    // L2 norm of the difference of each frame, averaged over frames.
    ensure_model(ctx);
    const auto &tm = *ctx.models;
    const std::size_t d = tm.fm.config().d_mel;
    double worst = 0.0, mean_l2 = 0.0;
    const std::size_t prompts = 16;
    for (std::size_t i = 0; i < prompts; ++i) {
        const auto s = pipe::heldout_prompt(tm, toy::Stage::Two, i);
        const auto seq = tm.sequence(s);
        NoGradScope ng;
        const auto out = tm.am.forward(*ctx.params, seq);
        const Tensor h = slice_rows(out.hidden, 0, s.tokens.size());
        const auto mask = fm::make_chunk_mask(s.tokens.size() * tm.fm.config().frames_per_token, ctx.cfg.eval_chunk);
        const Tensor a = tm.fm.sample(*ctx.params, h, mask, 10, 1000 + i);
        const Tensor b = tm.fm.sample(*ctx.params, h, mask, 100, 1000 + i);
        double sum_l2 = 0.0;
        for (std::size_t r = 0; r < a.rows(); ++r) {
            double sq = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                sq += std::pow(a.at(r, k) - b.at(r, k), 2);
            }
            sum_l2 += std::sqrt(sq);
        }
        const double l2 = sum_l2 / static_cast<double>(a.rows());
        worst = std::max(worst, l2);
        mean_l2 += l2 / prompts;
    }
    const bool ok = mean_err < kGmmMeanTol && fro(m100) < kGmmCovTol && worst < kEulerTol;
    return {ok, fmt("GMM 100 steps: mean err %.4f, cov Frobenius %.4f (10 steps: %.4f); toy model Euler 10 vs 100 "
                    "per-frame L2 averaged per sample: max %.4f, mean %.4f over 16 samples",
                    mean_err, fro(m100), fro(m10), worst, mean_l2)};
}

// ---- 7: FSQ ----

Outcome fsq_suite(Context &) {
    std::size_t bijection_bad = 0, codebooks = 0;
    const std::vector<std::vector<int>> configs{{3},    {5, 5, 5}, {7, 5, 5, 3}, {3, 3, 3, 3, 3, 3, 3},
                                                {9, 9, 7, 7}, {15, 15, 15}, {5, 3}, {7, 7, 7, 7}};
    for (const auto &levels : configs) {
        std::size_t size = 1;
        for (int l : levels) {
            size *= static_cast<std::size_t>(l);
        }
        if (size > 4096) {
            continue;
        }
        ++codebooks;
        std::vector<bool> seen(size, false);
        for (std::size_t k = 0; k < size; ++k) {
            // mixed radix, first dimension least significant
            std::vector<int> digits;
            std::size_t rest = k;
            for (int l : levels) {
                digits.push_back(static_cast<int>(rest % static_cast<std::size_t>(l)));
                rest /= static_cast<std::size_t>(l);
            }
            const std::size_t idx = fsq::digits_to_index(digits, levels);
            bijection_bad += idx != k || fsq::index_to_digits(idx, levels) != digits ? 1 : 0;
            if (idx < size) {
                seen[idx] = true;
            }
        }
        bijection_bad += std::count(seen.begin(), seen.end(), false);
    }

    std::size_t idem_bad = 0;
    Rng rng(3);
    for (const std::vector<int> &levels : {std::vector<int>{3, 3}, std::vector<int>{5, 5, 5}, std::vector<int>{3, 5, 5, 3}}) {
        fsq::FsqConfig cfg;
        cfg.levels = levels;
        std::vector<double> zv(300 * levels.size());
        for (auto &z : zv) {
            z = 2.0 * rng.normal();
        }
        const auto q1 = fsq::quantize(Tensor::from({300, levels.size()}, zv), cfg);
        const auto q2 = fsq::quantize(q1.values, cfg);
        idem_bad += rows_equal(q1.values, q2.values) ? 0 : 1;
        for (std::size_t r = 0; r < q1.codes.size(); ++r) {
            idem_bad += q1.codes[r].index != q2.codes[r].index ? 1 : 0;
        }
    }

    fsq::FsqConfig cfg;
    std::vector<double> zv(48), wv(48);
    for (std::size_t i = 0; i < 48; ++i) {
        zv[i] = 1.5 * rng.normal();
        wv[i] = rng.normal();
    }
    const Tensor z = Tensor::from({16, 3}, zv, true);
    const Tensor w = Tensor::from({16, 3}, wv);
    backward(sum(mul(fsq::quantize(z, cfg).values, w)));
    const Tensor z2 = Tensor::from({16, 3}, zv, true);
    backward(sum(mul(jvtoy::tanh(z2), w)));
    double diff = 0.0, scale_ref = 0.0;
    for (std::size_t i = 0; i < 48; ++i) {
        diff = std::max(diff, std::abs(z.grad()[i] - z2.grad()[i]));
        scale_ref = std::max(scale_ref, std::abs(z2.grad()[i]));
    }
    const double ste_rel = diff / scale_ref;

    std::size_t count_bad = 0;
    for (int factor : {4, 8}) {
        fsq::TokenizerConfig tc;
        tc.fsq.downsample_factor = factor;
        fsq::Tokenizer tok(tc);
        ParameterStore tps(1);
        tok.init(tps);
        for (std::size_t t = 1; t <= 100; ++t) {
            std::vector<double> fv(t * tc.d_in);
            for (auto &x : fv) {
                x = rng.normal();
            }
            const auto tokens = tok.tokenize(tps, Tensor::from({t, tc.d_in}, fv));
            const std::size_t expect = t / factor + (t % factor != 0 ? 1 : 0);
            count_bad += tokens.size() != expect ? 1 : 0;
        }
    }
    const bool ok = bijection_bad == 0 && idem_bad == 0 && ste_rel < kSteTol && count_bad == 0;
    return {ok, fmt("bijection errors %zu over %zu codebooks; idempotence errors %zu (levels <= 5); STE vs tanh rel %.2e "
                    "(tol %.0e); token-count errors %zu over T in [1,100] x factors {4,8}",
                    bijection_bad, codebooks, idem_bad, ste_rel, kSteTol, count_bad)};
}

// ---- 8: DPO / APO ----

double dpo_scalar(double pc, double pr, double rc, double rr, double beta) {
    return pref::dpo_loss({{Tensor::scalar(pc), Tensor::scalar(pr), rc, rr}}, beta).item();
}

// Pooled held-out token CER with sampled decoding, fixed seeds.
double sampled_cer(const train::Models &m, const ParameterStore &ps, const RunConfig &cfg, std::size_t prompts) {
    std::size_t edits = 0, ref = 0;
    for (std::size_t i = 0; i < prompts; ++i) {
        const auto s = pipe::heldout_prompt(m, toy::Stage::Two, i);
        am::DecodeConfig dc{cfg.apo_temperature, 0, mix_seed(0x434552, i), 0};
        NoGradScope ng;
        const auto prefix = seq::build_prefix(s.profiles, s.script, m.am.config().use_spk_embeddings);
        const auto tokens = m.am.sample(ps, prefix, dc).tokens;
        const auto want = toy::script_symbols(s.script);
        edits += eval::edit_distance(want, m.world.symbols_from_tokens(tokens)).total();
        ref += want.size();
    }
    return static_cast<double>(edits) / static_cast<double>(ref);
}

Outcome preference_suite(Context &ctx) {
    ensure_model(ctx);
    const auto &m = *ctx.models;

    // APO round on the trained model, then the ln 2 check on its pairs.
    auto apo = pref::ApoConfig::from(ctx.cfg);
    apo.stage = toy::Stage::Two;
    const auto round = pref::apo_round(m, *ctx.params, apo);
    double ln2_err = std::numeric_limits<double>::infinity();
    if (!round.pairs.empty()) {
        std::vector<pref::PairLogprobs> lp;
        NoGradScope ng;
        for (std::size_t k = 0; k < std::min<std::size_t>(8, round.pairs.size()); ++k) {
            const auto &p = round.pairs[k];
            const auto prompt = pref::prompt_from_id(m.world, p.prompt_id);
            auto chosen = p.chosen, rejected = p.rejected;
            chosen.push_back(ctx.cfg.am.eos());
            rejected.push_back(ctx.cfg.am.eos());
            const Tensor pc = pref::seq_logprob(m.am, *ctx.params, prompt, chosen);
            const Tensor pr = pref::seq_logprob(m.am, *ctx.params, prompt, rejected);
            lp.push_back({pc, pr, pc.item(), pr.item()});
        }
        ln2_err = std::abs(pref::dpo_loss(lp, ctx.cfg.dpo_beta).item() - std::numbers::ln2);
    }

    double shift_err = 0.0;
    {
        Float64Scope f64;
        Rng rng(11);
        for (int trial = 0; trial < 200; ++trial) {
            const double pc = -10 * rng.uniform(), pr = -10 * rng.uniform(), rc = -10 * rng.uniform(),
                         rr = -10 * rng.uniform();
            const double c = 20 * (rng.uniform() - 0.5), d = 20 * (rng.uniform() - 0.5);
            const double base = dpo_scalar(pc, pr, rc, rr, 0.5);
            shift_err = std::max(shift_err, std::abs(dpo_scalar(pc + c, pr + c, rc + d, rr + d, 0.5) - base));
        }
    }

    std::size_t count_bad = 0;
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(14);
        std::vector<std::vector<int>> cands(n);
        std::vector<double> cers(n);
        for (std::size_t i = 0; i < n; ++i) {
            cands[i] = {static_cast<int>(rng.uniform_int(10)), static_cast<int>(rng.uniform_int(3))};
            cers[i] = 0.1 * cands[i][1];
        }
        std::set<std::vector<int>> chosen, rejected;
        for (std::size_t i = 0; i < n; ++i) {
            (cers[i] == 0.0 ? chosen : rejected).insert(cands[i]);
        }
        std::set<std::pair<std::vector<int>, std::vector<int>>> want;
        for (const auto &c : chosen) {
            for (const auto &r : rejected) {
                want.insert({c, r});
            }
        }
        const auto got = pref::apo_build_pairs("p", cands, cers, 0, static_cast<std::uint64_t>(trial));
        std::set<std::pair<std::vector<int>, std::vector<int>>> have;
        for (const auto &p : got.pairs) {
            have.insert({p.chosen, p.rejected});
        }
        count_bad += have != want || got.pairs.size() != want.size() ? 1 : 0;
    }

    // One DPO epoch on the harvested pairs.
    const std::size_t prompts = 32;
    const double before = sampled_cer(m, *ctx.params, ctx.cfg, prompts);
    double after = before;
    if (!round.pairs.empty()) {
        auto policy = ctx.params->clone();
        pref::dpo_train(m, policy, *ctx.params, round.pairs, pref::DpoConfig::from(ctx.cfg));
        after = sampled_cer(m, policy, ctx.cfg, prompts);
    }
    const bool ok = ln2_err <= kLn2Tol && shift_err <= 1e-12 && count_bad == 0 && !round.pairs.empty() && after <= before;
    return {ok, fmt("|loss - ln 2| at theta=ref %.2e; max shift change %.1e; APO count mismatches %zu/50; %zu pairs "
                    "(yield %.2f); held-out sampled CER %.4f -> %.4f after one epoch",
                    ln2_err, shift_err, count_bad, round.pairs.size(), round.yield, before, after)};
}

// ---- 9: cpWER ----

// Plain DP edit cost, no tie-breaking needed for totals.
std::size_t lev(const std::vector<std::string> &a, const std::vector<std::string> &b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) {
        prev[j] = j;
    }
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

// Every injective map of ref speakers into hyp speakers or "nobody", by recursion.
std::size_t brute_cp(const std::vector<std::vector<std::string>> &r, const std::vector<std::vector<std::string>> &h) {
    std::size_t best = ~std::size_t{0};
    std::vector<bool> used(h.size(), false);
    std::function<void(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t acc) {
        if (i == r.size()) {
            std::size_t extra = 0;
            for (std::size_t j = 0; j < h.size(); ++j) {
                extra += used[j] ? 0 : h[j].size();
            }
            best = std::min(best, acc + extra);
            return;
        }
        go(i + 1, acc + r[i].size());
        for (std::size_t j = 0; j < h.size(); ++j) {
            if (!used[j]) {
                used[j] = true;
                go(i + 1, acc + lev(r[i], h[j]));
                used[j] = false;
            }
        }
    };
    go(0, 0);
    return best;
}

eval::SpeakerTranscript spk(std::string id, std::vector<std::pair<long, std::string>> utts) {
    eval::SpeakerTranscript s{std::move(id), {}};
    for (auto &[k, text] : utts) {
        s.utterances.push_back({k, eval::word_tokens(text)});
    }
    return s;
}

Outcome cpwer_suite(Context &) {
    Rng rng(77);
    std::size_t oracle_bad = 0, perm_bad = 0, one_bad = 0, cases = 0;
    while (cases < 100) {
        const std::size_t nr = 2 + rng.uniform_int(3), nh = 2 + rng.uniform_int(3);
        std::vector<eval::SpeakerTranscript> rs, hs;
        std::vector<std::vector<std::string>> r, h;
        auto words = [&](std::size_t max_len) {
            std::vector<std::string> w(rng.uniform_int(max_len + 1));
            for (auto &x : w) {
                x = "w" + std::to_string(rng.uniform_int(3));
            }
            return w;
        };
        for (std::size_t i = 0; i < nr; ++i) {
            r.push_back(words(5));
            rs.push_back({"r" + std::to_string(i), {{static_cast<long>(i), r.back()}}});
        }
        for (std::size_t i = 0; i < nh; ++i) {
            h.push_back(words(5));
            hs.push_back({"h" + std::to_string(i), {{static_cast<long>(i), h.back()}}});
        }
        std::size_t ref_len = 0;
        for (const auto &x : r) {
            ref_len += x.size();
        }
        if (ref_len == 0) {
            continue;
        }
        ++cases;
        const auto got = eval::cpwer(rs, hs);
        oracle_bad += got.counts.total() != brute_cp(r, h) ? 1 : 0;
        auto hs2 = hs, rs2 = rs;
        std::reverse(hs2.begin(), hs2.end());
        std::rotate(rs2.begin(), rs2.begin() + 1, rs2.end());
        for (auto &s : hs2) {
            s.speaker = "x" + s.speaker;
        }
        perm_bad += eval::cpwer(rs2, hs2).counts.total() != got.counts.total() ? 1 : 0;
        const std::vector<eval::SpeakerTranscript> one_r{rs[0]}, one_h{hs[0]};
        if (!r[0].empty()) {
            one_bad += eval::cpwer(one_r, one_h).rate != eval::error_rate(r[0], h[0]).rate ? 1 : 0;
        }
    }

    // worked examples
    std::size_t examples_bad = 0;
    auto expect = [&](bool cond) { examples_bad += cond ? 0 : 1; };
    const std::vector<std::string> ab{"a", "b"}, abc{"a", "b", "c"};
    expect(eval::edit_distance(ab, ab) == eval::EditCounts{0, 0, 0});
    expect(eval::edit_distance(ab, abc) == eval::EditCounts{0, 0, 1});
    expect(eval::cer("abcd", "abcd").rate == 0.0);
    expect(eval::cer("abcd", "abxd").rate == 0.25);
    expect(eval::wer("a b c", "").rate == 1.0);
    bool threw = false;
    try {
        eval::cer("", "a");
    } catch (const eval::UndefinedRate &) {
        threw = true;
    }
    expect(threw);
    expect(eval::cpwer({spk("A", {{0, "hi there"}, {2, "ok"}}), spk("B", {{1, "hello you"}})},
                       {spk("x", {{1, "hello you"}}), spk("y", {{0, "hi there"}, {2, "ok"}})})
               .rate == 0.0);
    const auto twothirds = eval::cpwer({spk("A", {{0, "a b"}}), spk("B", {{1, "c"}})}, {spk("h", {{0, "a b c"}})});
    expect(twothirds.counts.total() == 2 && twothirds.counts.ins == 1 && twothirds.counts.del == 1 &&
           twothirds.rate == 2.0 / 3.0);

    const bool ok = oracle_bad == 0 && perm_bad == 0 && one_bad == 0 && examples_bad == 0;
    return {ok, fmt("oracle mismatches %zu/100; relabel/reorder changes %zu; 1-speaker != WER %zu; worked examples "
                    "failed %zu/8",
                    oracle_bad, perm_bad, one_bad, examples_bad)};
}

// ---- 10: multi-speaker ----

Outcome multi_speaker(Context &ctx) {
    ensure_model(ctx);
    const auto &m = *ctx.models;
    eval::EditCounts cp_sum;
    std::size_t ref_total = 0;
    double acc_sum = 0.0;
    for (std::size_t i = 0; i < kHeldoutScripts; ++i) {
        const auto script = m.world.draw_script(3, 6, mix_seed(0x3353364854, i));
        const auto profiles = m.world.draw_profiles(3, mix_seed(0x33535045414b, i));
        pipe::SynthOptions opt;
        opt.decode = ctx.cfg.decode;
        opt.chunk = ctx.cfg.eval_chunk;
        opt.euler_steps = ctx.cfg.fm.euler_steps;
        opt.seed = mix_seed(0x4d554c5449, i);
        const auto syn = pipe::synthesize(m, *ctx.params, profiles, script, opt);
        const auto cp =
            eval::cpwer(pipe::reference_transcripts(script), pipe::hypothesis_transcripts(syn.symbols, syn.symbol_speakers));
        cp_sum.sub += cp.counts.sub;
        cp_sum.del += cp.counts.del;
        cp_sum.ins += cp.counts.ins;
        ref_total += cp.ref_len;
        acc_sum += pipe::speaker_turn_accuracy(script, syn.symbol_speakers);
    }
    const double cpcer = static_cast<double>(cp_sum.total()) / static_cast<double>(ref_total);
    const double acc = acc_sum / static_cast<double>(kHeldoutScripts);
    const bool ok = cpcer < kCpcerMax && acc >= kSpeakerAccMin && ctx.train_seconds < kTrainBudgetSeconds;
    return {ok, fmt("%zu held-out 3-speaker 6-turn scripts: cpCER %.4f (< %.2f), speaker turn accuracy %.4f (>= %.2f), "
                    "training %.0f s (< %.0f)",
                    kHeldoutScripts, cpcer, kCpcerMax, acc, kSpeakerAccMin, ctx.train_seconds, kTrainBudgetSeconds)};
}

// ---- 11: determinism ----

std::map<std::string, std::string> snapshot(const fs::path &dir) {
    std::map<std::string, std::string> out;
    for (const auto &e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            std::ifstream in(e.path(), std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            out[fs::relative(e.path(), dir).string()] = ss.str();
        }
    }
    return out;
}

Outcome determinism(Context &ctx) {
    const fs::path base = ctx.work / "determinism";
    fs::remove_all(base);
    const std::string config =
        "seed = 3\nbatch_size = 2\nwarmup_steps = 2\nstages.1.steps = 4\nstages.2.steps = 3\n"
        "am.d_model = 16\nam.n_layers = 1\nam.n_heads = 2\nam.d_ff = 32\n"
        "fm.d_model = 16\nfm.n_layers = 1\nfm.n_heads = 2\nfm.d_ff = 32\nfm.time_dim = 8\n"
        "eval.prompts = 3\neval.loss_samples = 3\napo.prompts = 4\napo.n = 4\ntokenizer.steps = 3\n";
    std::size_t failures = 0;
    std::vector<std::map<std::string, std::string>> snaps;
    for (int rep = 0; rep < 2; ++rep) {
        const fs::path dir = base / ("rep" + std::to_string(rep));
        fs::create_directories(dir);
        const std::string cfg_path = (dir / "toy.cfg").string();
        std::ofstream(cfg_path) << config;
        {
            std::ofstream(dir / "ref.txt") << "0\tA\ta b c\n1\tB\td e\n";
            std::ofstream(dir / "hyp.txt") << "0\tx\ta b\n1\ty\td e f\n";
            // an untrained model has no CER-0 candidates, so dpo-train gets fixed pairs
            std::ofstream(dir / "pairs.tsv") << "s1-0\t1 40 2 44\t7 7\ns1-1\t3 9\t5 5 5\n";
        }
        const std::string run = (dir / "run").string();
        const std::vector<std::vector<std::string>> commands{
            {"train", "--config", cfg_path, "--run-dir", run},
            {"eval", "--run-dir", run},
            {"eval", "--run-dir", run, "--metric", "cpwer", "--unit", "word", "--ref", (dir / "ref.txt").string(),
             "--hyp", (dir / "hyp.txt").string()},
            {"sample", "--run-dir", run, "--speakers", "2", "--turns", "3", "--seed", "5"},
            {"apo-pairs", "--run-dir", run, "--n", "4", "--temperature", "1.5"},
            {"dpo-train", "--run-dir", run, "--pairs", (dir / "pairs.tsv").string()},
            {"gen-data", "--run-dir", run, "--stage", "2", "--split", "heldout", "--count", "3"},
        };
        for (const auto &cmd : commands) {
            std::ostringstream out, err;
            std::vector<std::string> argv{"jvtoy"};
            argv.insert(argv.end(), cmd.begin(), cmd.end());
            const int code = cli::run(argv, out, err);
            if (code != 0) {
                ++failures;
                progress("determinism: '" + cmd[0] + "' exited " + std::to_string(code) + ": " + err.str());
            }
        }
        snaps.push_back(snapshot(run));
    }
    std::size_t differing = 0;
    for (const auto &[name, bytes] : snaps[0]) {
        const auto it = snaps[1].find(name);
        if (it == snaps[1].end() || it->second != bytes) {
            ++differing;
            progress("determinism: " + name + " differs");
        }
    }
    differing += snaps[1].size() > snaps[0].size() ? snaps[1].size() - snaps[0].size() : 0;
    const bool has_metrics = snaps[0].count("metrics.tsv") == 1;
    const bool ok = failures == 0 && differing == 0 && has_metrics;
    return {ok, fmt("7 subcommands run twice: %zu files compared, %zu differ, %zu command failures", snaps[0].size(),
                    differing, failures)};
}

struct Criterion {
    int id;
    const char *name;
    std::function<Outcome(Context &)> fn;
};

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"jvtoy acceptance run"};
    std::string work = "acceptance_work";
    std::vector<int> only;
    app.add_option("--work-dir", work, "scratch directory for runs");
    app.add_option("--only", only, "run only these criteria");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "gradient integrity", gradient_integrity},
        {2, "cascade severance", severance},
        {3, "e2e vs cascade direction", e2e_direction},
        {4, "compression robustness direction", compression_robustness},
        {5, "chunk mask suite", chunk_mask_suite},
        {6, "flow-matching sanity", flow_sanity},
        {7, "FSQ suite", fsq_suite},
        {8, "DPO/APO suite", preference_suite},
        {9, "cpWER oracle", cpwer_suite},
        {10, "multi-speaker capability", multi_speaker},
        {11, "determinism", determinism},
    };

    Context ctx;
    ctx.work = work;
    fs::create_directories(ctx.work);
    int failed = 0;
    for (const auto &c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) {
            continue;
        }
        progress(fmt("criterion %d: %s", c.id, c.name));
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.fn(ctx);
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << fmt("criterion %2d %s  %s: ", c.id, o.pass ? "PASS" : "FAIL", c.name) << o.detail
                  << fmt(" [%.0f s]", seconds_since(t0)) << std::endl;
    }
    std::cout << (failed == 0 ? "ALL PASS" : fmt("%d FAILED", failed)) << std::endl;
    return failed == 0 ? 0 : 1;
}
