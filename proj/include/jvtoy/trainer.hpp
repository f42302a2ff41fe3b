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

#pragma once

#include "jvtoy/ar_model.hpp"
#include "jvtoy/config.hpp"
#include "jvtoy/flowmatch.hpp"
#include "jvtoy/params.hpp"
#include "jvtoy/toyworld.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace jvtoy::train {

struct CurriculumStage {
    std::string name;
    toy::Stage data = toy::Stage::One;
    std::size_t max_speakers = 1;
    std::size_t steps = 0;
};

struct TrainConfig {
    double lambda = 1.0;
    Mode mode = Mode::E2E;
    std::size_t warmup_steps = 100;
    double peak_lr = 2e-3;
    std::size_t batch_size = 12;
    std::uint64_t seed = 1;
    double grad_clip = 1.0;
    std::vector<CurriculumStage> stages;

    static TrainConfig from(const RunConfig &cfg);
    std::size_t total_steps() const;
    void validate() const;
};

// Linear warmup 0 -> peak over warmup_steps, then cosine down to 0 at total.
double lr_at(std::size_t step, std::size_t warmup_steps, std::size_t total_steps, double peak_lr);

// The world plus both networks, sized from one resolved RunConfig. Parameter
// names are prefixed am.* and fm.* so one store holds the joint model.
struct Models {
    explicit Models(const RunConfig &cfg);

    toy::World world;
    am::ArModel am;
    fm::FlowModel fm;

    ParameterStore make_params(std::uint64_t seed) const;
    seq::UnifiedSequence sequence(const toy::Sample &s) const;
};

struct LossTerms {
    Tensor total;
    Tensor l_am;
    Tensor l_fm;
};

// L_AM is the token-weighted cross-entropy over every speech position of the
// batch (EOS included); L_FM is the per-sample flow loss averaged over the
// batch, conditioned on h_AM at the content positions. Cascade mode cuts the
// gradient path from L_FM into the AM.
LossTerms joint_loss(const Models &m, const ParameterStore &ps, const std::vector<toy::Sample> &batch, double lambda,
                     Mode mode, Rng &rng);

struct StepRecord {
    std::size_t step = 0; // global, 1-based
    double loss = 0.0;
    double l_am = 0.0;
    double l_fm = 0.0;
    double lr = 0.0;
};

inline constexpr const char *kMetricsHeader = "step\tloss\tl_am\tl_fm\tlr";
std::string metrics_line(const StepRecord &r);

struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Trainer {
public:
    Trainer(const Models &models, TrainConfig cfg, ParameterStore &params);

    bool done() const { return stage_ >= cfg_.stages.size(); }
    std::size_t stage_index() const { return stage_; }
    std::size_t step_in_stage() const { return step_; }
    std::size_t global_step() const;

    // Samples for the given stage and step; the stream is a pure function of
    // (world seed, train seed, stage, step).
    std::vector<toy::Sample> batch(std::size_t stage, std::size_t step) const;

    // One optimizer update. Moving past the last step of a stage leaves the
    // trainer at step 0 of the next stage, with a fresh optimizer and schedule.
    StepRecord step();

    // Params, optimizer moments and the (stage, step) position.
    void save(const std::filesystem::path &base) const;
    void load(const std::filesystem::path &base);

private:
    const Models &m_;
    TrainConfig cfg_;
    ParameterStore &ps_;
    AdamW opt_;
    std::size_t stage_ = 0;
    std::size_t step_ = 0;
};

struct TrainResult {
    std::vector<StepRecord> log;
};

// Runs every stage. With a non-empty run_dir, each stage ends with a
// checkpoint under run_dir/checkpoints/ and the next stage starts by loading
// it back; the last one is also written as checkpoints/final. Metrics lines
// go to `metrics` (header first) as they are produced.
TrainResult train(const Models &m, const TrainConfig &cfg, ParameterStore &ps, const std::filesystem::path &run_dir,
                  std::ostream *metrics);

} // namespace jvtoy::train
