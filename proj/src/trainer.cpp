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

#include "jvtoy/trainer.hpp"

#include "jvtoy/ops.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>

namespace jvtoy::train {

TrainConfig TrainConfig::from(const RunConfig &cfg) {
    TrainConfig t;
    t.lambda = cfg.lambda;
    t.mode = cfg.mode;
    t.warmup_steps = cfg.warmup_steps;
    t.peak_lr = cfg.peak_lr;
    t.batch_size = cfg.batch_size;
    t.seed = cfg.seed;
    t.grad_clip = cfg.grad_clip;
    if (cfg.stage1_steps > 0) {
        t.stages.push_back({"stage1", toy::Stage::One, 1, cfg.stage1_steps});
    }
    if (cfg.stage2_steps > 0) {
        t.stages.push_back({"stage2", toy::Stage::Two, cfg.world.max_speakers, cfg.stage2_steps});
    }
    return t;
}

std::size_t TrainConfig::total_steps() const {
    std::size_t n = 0;
    for (const auto &s : stages) {
        n += s.steps;
    }
    return n;
}

void TrainConfig::validate() const {
    if (!(lambda >= 0.0)) {
        throw std::invalid_argument("lambda must be >= 0");
    }
    if (batch_size == 0 || !(peak_lr > 0.0)) {
        throw std::invalid_argument("batch_size >= 1 and peak_lr > 0 are required");
    }
    for (const auto &s : stages) {
        if (s.steps == 0) {
            throw std::invalid_argument("curriculum stage " + s.name + " has no steps");
        }
    }
}

double lr_at(std::size_t step, std::size_t warmup_steps, std::size_t total_steps, double peak_lr) {
    if (step > total_steps) {
        throw std::out_of_range("lr_at: step " + std::to_string(step) + " is past total_steps " +
                                std::to_string(total_steps));
    }
    if (warmup_steps > total_steps) {
        throw std::invalid_argument("lr_at: warmup_steps exceeds total_steps");
    }
    if (step < warmup_steps) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (total_steps == warmup_steps) {
        return peak_lr;
    }
    const double p = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

Models::Models(const RunConfig &cfg) : world(cfg.world), am(cfg.am), fm(cfg.fm) {}

ParameterStore Models::make_params(std::uint64_t seed) const {
    ParameterStore ps(seed);
    am.init(ps);
    fm.init(ps);
    return ps;
}

seq::UnifiedSequence Models::sequence(const toy::Sample &s) const {
    auto speech = s.tokens;
    speech.push_back(world.config().eos());
    return seq::build_sequence(s.profiles, s.script, speech, am.config().use_spk_embeddings);
}

LossTerms joint_loss(const Models &m, const ParameterStore &ps, const std::vector<toy::Sample> &batch, double lambda,
                     Mode mode, Rng &rng) {
    if (batch.empty()) {
        throw std::invalid_argument("joint_loss: empty batch");
    }
    std::vector<Tensor> logits;
    std::vector<std::size_t> targets;
    Tensor l_fm;
    for (const auto &s : batch) {
        const auto seq = m.sequence(s);
        const auto out = m.am.forward(ps, seq);
        logits.push_back(out.logits);
        for (int tok : seq.speech_tokens()) {
            targets.push_back(static_cast<std::size_t>(tok));
        }
        Tensor h = slice_rows(out.hidden, 0, s.tokens.size());
        if (mode == Mode::Cascade) {
            h = stop_gradient(h);
        }
        const std::size_t frames = s.frames.rows();
        const auto mask = fm::make_chunk_mask(frames, m.fm.draw_chunk(frames, rng));
        const Tensor l = m.fm.loss(ps, s.frames, h, mask, rng);
        l_fm = l_fm.defined() ? add(l_fm, l) : l;
    }
    LossTerms out;
    out.l_am = cross_entropy(concat_rows(logits), targets);
    out.l_fm = scale(l_fm, 1.0 / static_cast<double>(batch.size()));
    out.total = add(out.l_am, scale(out.l_fm, lambda));
    return out;
}

std::string metrics_line(const StepRecord &r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g", r.step, r.loss, r.l_am, r.l_fm, r.lr);
    return buf;
}

Trainer::Trainer(const Models &models, TrainConfig cfg, ParameterStore &params)
    : m_(models), cfg_(std::move(cfg)), ps_(params) {
    cfg_.validate();
}

std::size_t Trainer::global_step() const {
    std::size_t n = step_;
    for (std::size_t i = 0; i < stage_ && i < cfg_.stages.size(); ++i) {
        n += cfg_.stages[i].steps;
    }
    return n;
}

std::vector<toy::Sample> Trainer::batch(std::size_t stage, std::size_t step) const {
    const auto &st = cfg_.stages.at(stage);
    std::vector<toy::Sample> out;
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
        const std::uint64_t index = mix_seed(mix_seed(cfg_.seed, stage), step * cfg_.batch_size + b);
        auto s = m_.world.sample(st.data, toy::Split::Train, index);
        if (static_cast<std::size_t>(s.script.num_speakers) > st.max_speakers) {
            throw std::logic_error("curriculum stage " + st.name + " drew a sample with " +
                                   std::to_string(s.script.num_speakers) + " speakers");
        }
        out.push_back(std::move(s));
    }
    return out;
}

StepRecord Trainer::step() {
    if (done()) {
        throw std::logic_error("trainer: all curriculum stages are finished");
    }
    const auto &st = cfg_.stages[stage_];
    const auto data = batch(stage_, step_);
    Rng rng(mix_seed(mix_seed(cfg_.seed ^ 0x5452414eULL, stage_), step_));

    ps_.zero_grad();
    LossTerms terms;
    try {
        terms = joint_loss(m_, ps_, data, cfg_.lambda, cfg_.mode, rng);
    } catch (const NumericError &e) {
        throw NonFiniteLoss("non-finite value at " + st.name + " step " + std::to_string(step_ + 1) + ": " + e.what());
    }
    StepRecord rec;
    rec.step = global_step() + 1;
    rec.loss = terms.total.item();
    rec.l_am = terms.l_am.item();
    rec.l_fm = terms.l_fm.item();
    if (!std::isfinite(rec.loss)) {
        throw NonFiniteLoss("non-finite loss at " + st.name + " step " + std::to_string(step_ + 1) +
                            ": l_am=" + std::to_string(rec.l_am) + " l_fm=" + std::to_string(rec.l_fm));
    }
    backward(terms.total);
    clip_grad_norm(ps_, cfg_.grad_clip);
    // Update k of a stage uses lr_at(k); the schedule restarts every stage.
    rec.lr = lr_at(step_ + 1, std::min(cfg_.warmup_steps, st.steps), st.steps, cfg_.peak_lr);
    opt_.step(ps_, rec.lr);

    if (++step_ == st.steps) {
        ++stage_;
        step_ = 0;
        opt_ = AdamW();
    }
    return rec;
}

void Trainer::save(const std::filesystem::path &base) const {
    save_checkpoint(base, ps_, &opt_);
    std::ofstream pos(base.string() + ".position");
    pos << stage_ << ' ' << step_ << '\n';
    if (!pos) {
        throw std::runtime_error("cannot write " + base.string() + ".position");
    }
}

void Trainer::load(const std::filesystem::path &base) {
    load_checkpoint(base, ps_, &opt_);
    std::ifstream pos(base.string() + ".position");
    if (!(pos >> stage_ >> step_)) {
        throw std::runtime_error("cannot read " + base.string() + ".position");
    }
}

TrainResult train(const Models &m, const TrainConfig &cfg, ParameterStore &ps, const std::filesystem::path &run_dir,
                  std::ostream *metrics) {
    Trainer tr(m, cfg, ps);
    TrainResult result;
    if (metrics) {
        *metrics << kMetricsHeader << '\n';
    }
    const auto ckpt = run_dir.empty() ? run_dir : run_dir / "checkpoints";
    std::size_t stage = 0;
    while (!tr.done()) {
        const auto rec = tr.step();
        result.log.push_back(rec);
        if (metrics) {
            *metrics << metrics_line(rec) << '\n' << std::flush;
        }
        if (tr.stage_index() != stage && !ckpt.empty()) {
            // Stage boundary: write the checkpoint, then start the next
            // stage from what is on disk.
            const auto base = ckpt / cfg.stages[stage].name;
            tr.save(base);
            tr.load(base);
        }
        stage = tr.stage_index();
    }
    if (!ckpt.empty()) {
        tr.save(ckpt / "final");
    }
    return result;
}

} // namespace jvtoy::train
