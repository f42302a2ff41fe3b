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

#include "jvtoy/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace jvtoy {

namespace {

struct Key {
    const char *name;
    std::function<void(RunConfig &, const std::string &)> set;
    std::function<std::string(const RunConfig &)> get;
};

std::string trim(const std::string &s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) {
        return "";
    }
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string &v) {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("'" + v + "' is not a valid number");
    }
    return out;
}

double parse_double(const std::string &v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) {
            throw ConfigError("");
        }
        return d;
    } catch (const std::exception &) {
        throw ConfigError("'" + v + "' is not a valid number");
    }
}

bool parse_bool(const std::string &v) {
    if (v == "true" || v == "1" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "off") {
        return false;
    }
    throw ConfigError("'" + v + "' is not a boolean");
}

std::string fmt(double d) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

template <typename T>
std::string join(const std::vector<T> &v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? "," : "") + std::to_string(v[i]);
    }
    return s;
}

template <typename T>
std::vector<T> split_list(const std::string &v) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_number<T>(trim(item)));
    }
    if (out.empty()) {
        throw ConfigError("empty list");
    }
    return out;
}

#define JV_SIZE(key, field)                                                                                            \
    Key {                                                                                                              \
        key, [](RunConfig &c, const std::string &v) { c.field = parse_number<std::size_t>(v); },                       \
            [](const RunConfig &c) { return std::to_string(c.field); }                                                 \
    }
#define JV_U64(key, field)                                                                                             \
    Key {                                                                                                              \
        key, [](RunConfig &c, const std::string &v) { c.field = parse_number<std::uint64_t>(v); },                     \
            [](const RunConfig &c) { return std::to_string(c.field); }                                                 \
    }
#define JV_DOUBLE(key, field)                                                                                          \
    Key {                                                                                                              \
        key, [](RunConfig &c, const std::string &v) { c.field = parse_double(v); },                                    \
            [](const RunConfig &c) { return fmt(c.field); }                                                            \
    }
#define JV_BOOL(key, field)                                                                                            \
    Key {                                                                                                              \
        key, [](RunConfig &c, const std::string &v) { c.field = parse_bool(v); },                                      \
            [](const RunConfig &c) { return std::string(c.field ? "true" : "false"); }                                 \
    }

const std::vector<Key> &keys() {
    static const std::vector<Key> table = {
        JV_U64("seed", seed),
        Key{"mode",
            [](RunConfig &c, const std::string &v) {
                if (v == "e2e") {
                    c.mode = Mode::E2E;
                } else if (v == "cascade") {
                    c.mode = Mode::Cascade;
                } else {
                    throw ConfigError("mode must be e2e or cascade");
                }
            },
            [](const RunConfig &c) { return std::string(c.mode == Mode::E2E ? "e2e" : "cascade"); }},
        JV_DOUBLE("lambda", lambda),
        JV_SIZE("warmup_steps", warmup_steps),
        JV_DOUBLE("peak_lr", peak_lr),
        JV_SIZE("batch_size", batch_size),
        JV_DOUBLE("grad_clip", grad_clip),
        JV_SIZE("stages.1.steps", stage1_steps),
        JV_SIZE("stages.2.steps", stage2_steps),
        JV_U64("world.seed", world.seed),
        JV_DOUBLE("world.noise_std", world.noise_std),
        JV_DOUBLE("world.offset_scale", world.offset_scale),
        JV_SIZE("world.max_speakers", world.max_speakers),
        JV_SIZE("world.max_turns", world.max_turns),
        JV_SIZE("world.stage1_min_len", world.stage1_min_len),
        JV_SIZE("world.stage1_max_len", world.stage1_max_len),
        JV_SIZE("world.stage2_min_turn", world.stage2_min_turn),
        JV_SIZE("world.stage2_max_turn", world.stage2_max_turn),
        Key{"world.speaker_weights",
            [](RunConfig &c, const std::string &v) {
                c.world.speaker_weights.clear();
                std::stringstream ss(v);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    c.world.speaker_weights.push_back(parse_double(trim(item)));
                }
            },
            [](const RunConfig &c) {
                std::string s;
                for (std::size_t i = 0; i < c.world.speaker_weights.size(); ++i) {
                    s += (i ? "," : "") + fmt(c.world.speaker_weights[i]);
                }
                return s;
            }},
        Key{"fsq.levels", [](RunConfig &c, const std::string &v) { c.fsq.levels = split_list<int>(v); },
            [](const RunConfig &c) { return join(c.fsq.levels); }},
        Key{"fsq.downsample_factor",
            [](RunConfig &c, const std::string &v) { c.fsq.downsample_factor = parse_number<int>(v); },
            [](const RunConfig &c) { return std::to_string(c.fsq.downsample_factor); }},
        JV_DOUBLE("fsq.beta", fsq.beta),
        JV_SIZE("tokenizer.steps", tokenizer_steps),
        JV_DOUBLE("tokenizer.lr", tokenizer_lr),
        JV_SIZE("am.d_model", am.d_model),
        JV_SIZE("am.n_layers", am.n_layers),
        JV_SIZE("am.n_heads", am.n_heads),
        JV_SIZE("am.d_ff", am.d_ff),
        JV_SIZE("am.max_len", am.max_len),
        JV_BOOL("am.use_spk_embeddings", am.use_spk_embeddings),
        JV_SIZE("fm.d_model", fm.d_model),
        JV_SIZE("fm.n_layers", fm.n_layers),
        JV_SIZE("fm.n_heads", fm.n_heads),
        JV_SIZE("fm.d_ff", fm.d_ff),
        JV_SIZE("fm.time_dim", fm.time_dim),
        JV_SIZE("fm.euler_steps", fm.euler_steps),
        Key{"fm.chunk_choices",
            [](RunConfig &c, const std::string &v) { c.fm.chunk_choices = split_list<std::size_t>(v); },
            [](const RunConfig &c) { return join(c.fm.chunk_choices); }},
        JV_DOUBLE("decode.temperature", decode.temperature),
        JV_SIZE("decode.top_k", decode.top_k),
        JV_U64("decode.seed", decode.seed),
        JV_SIZE("decode.max_tokens", decode.max_tokens),
        JV_SIZE("eval.prompts", eval_prompts),
        JV_SIZE("eval.chunk", eval_chunk),
        JV_SIZE("eval.stage", eval_stage),
        JV_SIZE("eval.loss_samples", eval_loss_samples),
        JV_DOUBLE("dpo.beta", dpo_beta),
        JV_DOUBLE("dpo.lr", dpo_lr),
        JV_SIZE("dpo.epochs", dpo_epochs),
        JV_SIZE("apo.n", apo_n),
        JV_DOUBLE("apo.temperature", apo_temperature),
        JV_SIZE("apo.max_pairs", apo_max_pairs),
        JV_SIZE("apo.prompts", apo_prompts),
    };
    return table;
}

} // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto &k : keys()) {
        out.emplace_back(k.name);
    }
    return out;
}

void apply_setting(RunConfig &cfg, const std::string &key, const std::string &value) {
    for (const auto &k : keys()) {
        if (key == k.name) {
            try {
                k.set(cfg, value);
            } catch (const ConfigError &e) {
                throw ConfigError("config key '" + key + "': " + e.what());
            }
            return;
        }
    }
    std::string msg = "unknown config key '" + key + "'; valid keys are:";
    for (const auto &k : keys()) {
        msg += std::string("\n  ") + k.name;
    }
    throw ConfigError(msg);
}

void RunConfig::resolve() {
    if (lambda < 0.0) {
        throw ConfigError("lambda must be >= 0");
    }
    if (batch_size == 0) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (!(peak_lr > 0.0)) {
        throw ConfigError("peak_lr must be > 0");
    }
    if (eval_stage != 1 && eval_stage != 2) {
        throw ConfigError("eval.stage must be 1 or 2");
    }
    if (eval_chunk == 0 || apo_n < 2 || !(dpo_beta > 0.0)) {
        throw ConfigError("eval.chunk >= 1, apo.n >= 2 and dpo.beta > 0 are required");
    }
    try {
        fsq.validate();
        world.downsample_factor = fsq.downsample_factor;
        world.codebook_size = fsq.codebook_size();
        world.validate();
        am.text_vocab = world.text_vocab;
        am.speech_vocab = world.speech_vocab();
        am.d_spk = world.d_spk;
        am.max_speakers = world.max_speakers;
        am.tokens_per_symbol = world.tokens_per_symbol();
        am.validate();
        fm.d_mel = world.d_mel;
        fm.d_cond = am.d_model;
        fm.frames_per_token = world.frames_per_token();
        fm.validate();
    } catch (const ConfigError &) {
        throw;
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }
}

RunConfig parse_config(std::istream &in) {
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.resolve();
    return cfg;
}

RunConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    return parse_config(in);
}

std::string echo_config(const RunConfig &cfg) {
    std::string out;
    for (const auto &k : keys()) {
        out += std::string(k.name) + " = " + k.get(cfg) + "\n";
    }
    return out;
}

} // namespace jvtoy
