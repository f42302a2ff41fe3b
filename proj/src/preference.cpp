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

#include "jvtoy/preference.hpp"

#include "jvtoy/evalkit.hpp"
#include "jvtoy/ops.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace jvtoy::pref {

Tensor logprob_of(const am::ArModel &model, const ParameterStore &ps, const Prompt &prompt,
                  const std::vector<int> &tokens) {
    if (tokens.empty()) {
        throw std::invalid_argument("logprob: empty token sequence");
    }
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= model.config().speech_vocab) {
            throw std::out_of_range("logprob: token " + std::to_string(t) + " is outside the speech vocabulary of " +
                                    std::to_string(model.config().speech_vocab));
        }
    }
    const auto seq = seq::build_sequence(prompt.profiles, prompt.script, tokens, model.config().use_spk_embeddings);
    const auto out = model.forward(ps, seq);
    const std::vector<std::size_t> targets(tokens.begin(), tokens.end());
    return neg(cross_entropy(out.logits, targets, {}, Reduction::Sum));
}

Tensor seq_logprob(const am::ArModel &model, const ParameterStore &ps, const Prompt &prompt,
                   const std::vector<int> &tokens) {
    if (tokens.empty() || tokens.back() != model.config().eos()) {
        throw std::invalid_argument("seq_logprob: token sequence must end with EOS");
    }
    return logprob_of(model, ps, prompt, tokens);
}

Tensor dpo_loss(const std::vector<PairLogprobs> &pairs, double beta) {
    if (pairs.empty()) {
        throw std::invalid_argument("dpo_loss: empty pair set");
    }
    if (!(beta > 0.0)) {
        throw std::invalid_argument("dpo_loss: beta must be > 0");
    }
    Tensor acc;
    for (const auto &p : pairs) {
        const Tensor z = add_scalar(scale(sub(p.policy_chosen, p.policy_rejected), beta),
                                    -beta * (p.ref_chosen - p.ref_rejected));
        const Tensor l = neg(log_sigmoid(z));
        acc = acc.defined() ? add(acc, l) : l;
    }
    return scale(acc, 1.0 / static_cast<double>(pairs.size()));
}

PairBuild apo_build_pairs(const std::string &prompt_id, const std::vector<std::vector<int>> &candidates,
                          const std::vector<double> &cers, std::size_t max_pairs, std::uint64_t seed) {
    if (candidates.size() != cers.size()) {
        throw std::invalid_argument("apo_build_pairs: " + std::to_string(candidates.size()) + " candidates but " +
                                    std::to_string(cers.size()) + " CER values");
    }
    PairBuild out;
    std::map<std::vector<int>, bool> seen;
    std::vector<std::size_t> chosen, rejected;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!(cers[i] >= 0.0)) {
            throw std::invalid_argument("apo_build_pairs: CER must be >= 0");
        }
        if (!seen.emplace(candidates[i], true).second) {
            continue;
        }
        ++out.unique;
        (cers[i] == 0.0 ? chosen : rejected).push_back(i);
    }
    out.chosen = chosen.size();
    out.rejected = rejected.size();
    out.product = chosen.size() * rejected.size();
    out.skipped = out.product == 0;

    std::vector<std::size_t> keep(out.product);
    std::iota(keep.begin(), keep.end(), 0);
    if (max_pairs > 0 && out.product > max_pairs) {
        Rng rng(seed);
        for (std::size_t i = 0; i < max_pairs; ++i) {
            std::swap(keep[i], keep[i + rng.uniform_int(keep.size() - i)]);
        }
        keep.resize(max_pairs);
        std::sort(keep.begin(), keep.end());
    }
    for (std::size_t k : keep) {
        const std::size_t c = chosen[k / rejected.size()], r = rejected[k % rejected.size()];
        out.pairs.push_back({prompt_id, candidates[c], candidates[r]});
    }
    return out;
}

double candidate_cer(const toy::World &world, const std::vector<int> &tokens, const seq::DialogueScript &script) {
    const auto ref = toy::script_symbols(script);
    return eval::error_rate(ref, world.symbols_from_tokens(tokens)).rate;
}

ApoConfig ApoConfig::from(const RunConfig &cfg) {
    ApoConfig a;
    a.n = cfg.apo_n;
    a.temperature = cfg.apo_temperature;
    a.top_k = cfg.decode.top_k;
    a.max_pairs = cfg.apo_max_pairs;
    a.prompts = cfg.apo_prompts;
    a.stage = cfg.eval_stage == 1 ? toy::Stage::One : toy::Stage::Two;
    a.seed = cfg.seed;
    return a;
}

Prompt apo_prompt(const toy::World &world, toy::Stage stage, std::uint64_t index) {
    const auto s = world.sample(stage, toy::Split::Train, mix_seed(0x41504f50524f4d50ULL, index));
    return {(stage == toy::Stage::One ? "s1-" : "s2-") + std::to_string(index), s.profiles, s.script};
}

Prompt prompt_from_id(const toy::World &world, const std::string &id) {
    if (id.size() < 4 || (id.rfind("s1-", 0) != 0 && id.rfind("s2-", 0) != 0)) {
        throw std::invalid_argument("bad prompt id '" + id + "' (expected s1-<n> or s2-<n>)");
    }
    std::uint64_t index = 0;
    try {
        std::size_t used = 0;
        index = std::stoull(id.substr(3), &used);
        if (used != id.size() - 3) {
            throw std::invalid_argument("");
        }
    } catch (const std::exception &) {
        throw std::invalid_argument("bad prompt id '" + id + "'");
    }
    return apo_prompt(world, id[1] == '1' ? toy::Stage::One : toy::Stage::Two, index);
}

ApoRound apo_round(const train::Models &m, const ParameterStore &ps, const ApoConfig &cfg) {
    if (cfg.n < 2) {
        throw std::invalid_argument("apo_round: need at least 2 candidates per prompt");
    }
    NoGradScope no_grad;
    ApoRound out;
    std::size_t yielded = 0;
    for (std::size_t p = 0; p < cfg.prompts; ++p) {
        const auto prompt = apo_prompt(m.world, cfg.stage, p);
        const auto prefix = seq::build_prefix(prompt.profiles, prompt.script, m.am.config().use_spk_embeddings);
        std::vector<std::vector<int>> cands;
        std::vector<double> cers;
        for (std::size_t n = 0; n < cfg.n; ++n) {
            am::DecodeConfig dc;
            dc.temperature = cfg.temperature;
            dc.top_k = cfg.top_k;
            dc.seed = mix_seed(mix_seed(cfg.seed, p), n);
            auto res = m.am.sample(ps, prefix, dc);
            cers.push_back(candidate_cer(m.world, res.tokens, prompt.script));
            cands.push_back(std::move(res.tokens));
        }
        auto built = apo_build_pairs(prompt.id, cands, cers, cfg.max_pairs, mix_seed(cfg.seed ^ 0x50414952ULL, p));
        out.stats.push_back({prompt.id, built.unique, built.chosen, built.rejected, built.pairs.size()});
        yielded += built.pairs.empty() ? 0 : 1;
        for (auto &pr : built.pairs) {
            out.pairs.push_back(std::move(pr));
        }
    }
    out.yield = cfg.prompts ? static_cast<double>(yielded) / static_cast<double>(cfg.prompts) : 0.0;
    return out;
}

namespace {

std::string join_tokens(const std::vector<int> &v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? " " : "") + std::to_string(v[i]);
    }
    return s;
}

std::vector<int> split_tokens(const std::string &s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) {
        std::size_t used = 0;
        const int v = std::stoi(w, &used);
        if (used != w.size()) {
            throw std::invalid_argument("bad token '" + w + "'");
        }
        out.push_back(v);
    }
    return out;
}

} // namespace

void write_pairs(std::ostream &out, const std::vector<PreferencePair> &pairs) {
    for (const auto &p : pairs) {
        out << p.prompt_id << '\t' << join_tokens(p.chosen) << '\t' << join_tokens(p.rejected) << '\n';
    }
}

std::vector<PreferencePair> read_pairs(std::istream &in) {
    std::vector<PreferencePair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw std::invalid_argument("pairs line " + std::to_string(lineno) +
                                        ": expected <prompt_id>\\t<chosen>\\t<rejected>");
        }
        try {
            out.push_back({line.substr(0, t1), split_tokens(line.substr(t1 + 1, t2 - t1 - 1)),
                           split_tokens(line.substr(t2 + 1))});
        } catch (const std::exception &e) {
            throw std::invalid_argument("pairs line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

DpoConfig DpoConfig::from(const RunConfig &cfg) {
    DpoConfig d;
    d.beta = cfg.dpo_beta;
    d.lr = cfg.dpo_lr;
    d.epochs = cfg.dpo_epochs;
    d.seed = cfg.seed;
    return d;
}

std::vector<DpoStep> dpo_train(const train::Models &m, ParameterStore &policy, const ParameterStore &reference,
                               const std::vector<PreferencePair> &pairs, const DpoConfig &cfg) {
    if (pairs.empty()) {
        throw std::invalid_argument("dpo_train: empty pair set");
    }
    const int eos = m.am.config().eos();
    auto with_eos = [eos](std::vector<int> v) {
        v.push_back(eos);
        return v;
    };
    std::map<std::string, Prompt> prompts;
    for (const auto &p : pairs) {
        if (!prompts.count(p.prompt_id)) {
            prompts.emplace(p.prompt_id, prompt_from_id(m.world, p.prompt_id));
        }
    }
    std::vector<std::pair<double, double>> ref(pairs.size());
    {
        NoGradScope no_grad;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto &pr = prompts.at(pairs[i].prompt_id);
            ref[i] = {seq_logprob(m.am, reference, pr, with_eos(pairs[i].chosen)).item(),
                      seq_logprob(m.am, reference, pr, with_eos(pairs[i].rejected)).item()};
        }
    }

    // The flow head is not part of the policy.
    std::vector<Tensor> frozen;
    for (const auto &[name, t] : policy.entries()) {
        if (name.rfind("am.", 0) != 0 && t.requires_grad()) {
            Tensor h = t;
            h.set_requires_grad(false);
            frozen.push_back(h);
        }
    }

    AdamW opt;
    std::vector<DpoStep> log;
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(cfg.seed ^ 0x44504fULL, epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.uniform_int(i)]);
        }
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_pairs) {
            policy.zero_grad();
            std::vector<PairLogprobs> batch;
            double margin = 0.0;
            for (std::size_t j = b; j < std::min(order.size(), b + cfg.batch_pairs); ++j) {
                const auto &p = pairs[order[j]];
                const auto &pr = prompts.at(p.prompt_id);
                PairLogprobs lp{seq_logprob(m.am, policy, pr, with_eos(p.chosen)),
                                seq_logprob(m.am, policy, pr, with_eos(p.rejected)), ref[order[j]].first,
                                ref[order[j]].second};
                margin += (lp.policy_chosen.item() - lp.ref_chosen) - (lp.policy_rejected.item() - lp.ref_rejected);
                batch.push_back(std::move(lp));
            }
            const Tensor loss = dpo_loss(batch, cfg.beta);
            backward(loss);
            clip_grad_norm(policy, 1.0);
            opt.step(policy, cfg.lr);
            log.push_back({log.size() + 1, loss.item(), margin / static_cast<double>(batch.size())});
        }
    }
    for (auto &t : frozen) {
        t.set_requires_grad(true);
    }
    return log;
}

} // namespace jvtoy::pref
