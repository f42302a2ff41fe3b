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
#include "jvtoy/flowmatch.hpp"
#include "jvtoy/fsq.hpp"
#include "jvtoy/toyworld.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace jvtoy {

enum class Mode { E2E, Cascade };

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Everything a run needs, loaded from flat "key = value" text. The list of
// keys lives in config.cpp; unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 1;
    Mode mode = Mode::E2E;
    double lambda = 1.0;
    std::size_t warmup_steps = 100;
    double peak_lr = 2e-3;
    std::size_t batch_size = 12;
    double grad_clip = 1.0;
    std::size_t stage1_steps = 2000;
    std::size_t stage2_steps = 1000;

    toy::WorldConfig world;
    fsq::FsqConfig fsq;
    std::size_t tokenizer_steps = 0;
    double tokenizer_lr = 3e-3;

    am::ArConfig am;
    fm::FlowConfig fm;
    am::DecodeConfig decode{0.0, 0, 0, 0};

    std::size_t eval_prompts = 32;
    std::size_t eval_chunk = 8;
    std::size_t eval_stage = 1;
    std::size_t eval_loss_samples = 32;

    double dpo_beta = 0.1;
    double dpo_lr = 2e-4;
    std::size_t dpo_epochs = 1;
    std::size_t apo_n = 8;
    double apo_temperature = 1.0;
    std::size_t apo_max_pairs = 16;
    std::size_t apo_prompts = 64;

    // Derives dependent fields (vocab sizes, tokens per symbol, d_cond, r)
    // and validates the whole configuration.
    void resolve();
};

RunConfig parse_config(std::istream &in);
RunConfig load_config(const std::filesystem::path &path);
// Applies one "key=value" override (CLI --set).
void apply_setting(RunConfig &cfg, const std::string &key, const std::string &value);
// Every key with its resolved value, one "key = value" per line.
std::string echo_config(const RunConfig &cfg);
std::vector<std::string> config_keys();

} // namespace jvtoy
