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

#include "jvtoy/pipeline.hpp"

#include "jvtoy/ops.hpp"

#include <cstdio>
#include <map>
#include <ostream>

namespace jvtoy::pipe {

namespace {

std::string symbol_str(int x) {
    return (x >= 0 && x < static_cast<int>(toy::kAlphabet.size())) ? std::string(1, toy::kAlphabet[x]) : "?";
}

std::vector<std::string> as_strings(const std::vector<int> &symbols) {
    std::vector<std::string> out;
    for (int x : symbols) {
        out.push_back(symbol_str(x));
    }
    return out;
}

} // namespace

Synthesis synthesize(const train::Models &m, const ParameterStore &ps, const std::vector<seq::SpeakerProfile> &profiles,
                     const seq::DialogueScript &script, const SynthOptions &opt) {
    NoGradScope no_grad;
    const auto prefix = seq::build_prefix(profiles, script, m.am.config().use_spk_embeddings);
    const auto res = m.am.sample(ps, prefix, opt.decode);
    Synthesis syn;
    syn.tokens = res.tokens;
    syn.hit_eos = res.hit_eos;
    syn.symbols = m.world.symbols_from_tokens(res.tokens);
    if (res.tokens.empty()) {
        syn.symbol_speakers.assign(syn.symbols.size(), -1);
        return syn;
    }
    const std::size_t frames = res.tokens.size() * m.fm.config().frames_per_token;
    syn.frames = m.fm.sample(ps, res.hidden, fm::make_chunk_mask(frames, opt.chunk), opt.euler_steps, opt.seed);
    syn.heard = m.world.listen(syn.frames, profiles);
    for (std::size_t j = 0; j < syn.symbols.size(); ++j) {
        const auto &sp = syn.heard.speakers;
        syn.symbol_speakers.push_back(sp.empty() ? -1 : sp[std::min(j, sp.size() - 1)]);
    }
    return syn;
}

std::vector<eval::SpeakerTranscript> reference_transcripts(const seq::DialogueScript &script) {
    std::vector<eval::SpeakerTranscript> out(static_cast<std::size_t>(script.num_speakers));
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].speaker = "S" + std::to_string(k);
    }
    for (std::size_t i = 0; i < script.turns.size(); ++i) {
        const auto &t = script.turns[i];
        out[static_cast<std::size_t>(t.speaker)].utterances.push_back({static_cast<long>(i), as_strings(t.text)});
    }
    return out;
}

std::vector<eval::SpeakerTranscript> hypothesis_transcripts(const std::vector<int> &symbols,
                                                            const std::vector<int> &speakers) {
    std::vector<eval::SpeakerTranscript> out;
    std::map<int, std::size_t> index;
    long run = -1;
    int prev = 0;
    for (std::size_t j = 0; j < symbols.size(); ++j) {
        const int k = j < speakers.size() ? speakers[j] : -1;
        auto [it, fresh] = index.emplace(k, out.size());
        if (fresh) {
            out.push_back({"S" + std::to_string(k), {}});
        }
        auto &utts = out[it->second].utterances;
        if (j == 0 || k != prev) {
            utts.push_back({++run, {}});
        }
        utts.back().tokens.push_back(symbol_str(symbols[j]));
        prev = k;
    }
    return out;
}

double speaker_turn_accuracy(const seq::DialogueScript &script, const std::vector<int> &symbol_speakers) {
    if (script.turns.empty()) {
        throw std::invalid_argument("speaker_turn_accuracy: empty script");
    }
    std::size_t pos = 0, correct = 0;
    for (const auto &t : script.turns) {
        std::map<int, std::size_t> votes;
        for (std::size_t j = pos; j < pos + t.text.size() && j < symbol_speakers.size(); ++j) {
            ++votes[symbol_speakers[j]];
        }
        pos += t.text.size();
        std::size_t best = 0, mine = votes.count(t.speaker) ? votes[t.speaker] : 0;
        bool unique = mine > 0;
        for (const auto &[k, n] : votes) {
            if (k != t.speaker && n >= mine) {
                unique = false;
            }
            best = std::max(best, n);
        }
        correct += unique && mine == best ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(script.turns.size());
}

toy::Sample heldout_prompt(const train::Models &m, toy::Stage stage, std::size_t i) {
    return m.world.sample(stage, toy::Split::Heldout, i);
}

HeldoutLoss heldout_loss(const train::Models &m, const ParameterStore &ps, toy::Stage stage, std::size_t samples,
                         std::size_t chunk, std::size_t draws_per_sample) {
    if (samples == 0 || draws_per_sample == 0) {
        throw std::invalid_argument("heldout_loss: need at least one sample and one draw");
    }
    NoGradScope no_grad;
    double am_sum = 0.0, fm_sum = 0.0;
    std::size_t am_count = 0;
    for (std::size_t i = 0; i < samples; ++i) {
        const auto s = heldout_prompt(m, stage, i);
        const auto seq = m.sequence(s);
        const auto out = m.am.forward(ps, seq);
        std::vector<std::size_t> targets;
        for (int tok : seq.speech_tokens()) {
            targets.push_back(static_cast<std::size_t>(tok));
        }
        am_sum += cross_entropy(out.logits, targets, {}, Reduction::Sum).item();
        am_count += targets.size();
        const Tensor h = slice_rows(out.hidden, 0, s.tokens.size());
        const auto mask = fm::make_chunk_mask(s.frames.rows(), chunk);
        for (std::size_t d = 0; d < draws_per_sample; ++d) {
            Rng rng(mix_seed(0x484f4c444f5554ULL, i * draws_per_sample + d));
            fm_sum += m.fm.loss(ps, s.frames, h, mask, rng).item();
        }
    }
    return {am_sum / static_cast<double>(am_count), fm_sum / static_cast<double>(samples * draws_per_sample)};
}

EvalReport evaluate(const train::Models &m, const ParameterStore &ps, const RunConfig &cfg) {
    const auto stage = cfg.eval_stage == 1 ? toy::Stage::One : toy::Stage::Two;
    EvalReport r;
    eval::EditCounts tok_sum, frame_sum, cp_sum;
    std::size_t ref_total = 0;
    double acc_sum = 0.0;
    for (std::size_t i = 0; i < cfg.eval_prompts; ++i) {
        const auto s = heldout_prompt(m, stage, i);
        SynthOptions opt;
        opt.decode = cfg.decode;
        opt.decode.seed = mix_seed(cfg.decode.seed, i);
        opt.chunk = cfg.eval_chunk;
        opt.euler_steps = cfg.fm.euler_steps;
        opt.seed = mix_seed(cfg.seed ^ 0x53594e5448ULL, i);
        const auto syn = synthesize(m, ps, s.profiles, s.script, opt);

        const auto ref = toy::script_symbols(s.script);
        const auto tok = eval::edit_distance(ref, syn.symbols);
        const auto frame = eval::edit_distance(ref, syn.heard.symbols);
        const auto cp = eval::cpwer(reference_transcripts(s.script), hypothesis_transcripts(syn.symbols, syn.symbol_speakers));
        PromptResult p;
        p.id = s.id;
        p.speakers = static_cast<std::size_t>(s.script.num_speakers);
        p.token_cer = static_cast<double>(tok.total()) / static_cast<double>(ref.size());
        p.frame_cer = static_cast<double>(frame.total()) / static_cast<double>(ref.size());
        p.cpcer = cp.rate;
        p.speaker_acc = speaker_turn_accuracy(s.script, syn.symbol_speakers);
        p.hit_eos = syn.hit_eos;
        r.prompts.push_back(p);

        for (auto [sum, c] : {std::pair{&tok_sum, tok}, std::pair{&frame_sum, frame}, std::pair{&cp_sum, cp.counts}}) {
            sum->sub += c.sub;
            sum->del += c.del;
            sum->ins += c.ins;
        }
        ref_total += ref.size();
        acc_sum += p.speaker_acc;
    }
    if (!r.prompts.empty()) {
        const double n = static_cast<double>(ref_total);
        r.token_cer = static_cast<double>(tok_sum.total()) / n;
        r.frame_cer = static_cast<double>(frame_sum.total()) / n;
        r.cpcer = static_cast<double>(cp_sum.total()) / n;
        r.speaker_acc = acc_sum / static_cast<double>(r.prompts.size());
    }
    const auto hl = heldout_loss(m, ps, stage, cfg.eval_loss_samples, cfg.eval_chunk);
    r.am_loss = hl.l_am;
    r.fm_loss = hl.l_fm;
    return r;
}

void write_report(std::ostream &out, const EvalReport &r) {
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "prompts\t%zu\ntoken_cer\t%.6f\nframe_cer\t%.6f\ncpcer\t%.6f\nspeaker_acc\t%.6f\nheldout_l_am\t%.6f\n"
                  "heldout_l_fm\t%.6f\n",
                  r.prompts.size(), r.token_cer, r.frame_cer, r.cpcer, r.speaker_acc, r.am_loss, r.fm_loss);
    out << buf;
    out << "id\tspeakers\ttoken_cer\tframe_cer\tcpcer\tspeaker_acc\thit_eos\n";
    for (const auto &p : r.prompts) {
        std::snprintf(buf, sizeof buf, "%llu\t%zu\t%.6f\t%.6f\t%.6f\t%.6f\t%d\n", static_cast<unsigned long long>(p.id),
                      p.speakers, p.token_cer, p.frame_cer, p.cpcer, p.speaker_acc, p.hit_eos ? 1 : 0);
        out << buf;
    }
}

RunConfig gradcheck_config() {
    RunConfig c;
    c.fsq.downsample_factor = 8;
    c.am.d_model = 8;
    c.am.n_layers = 1;
    c.am.n_heads = 2;
    c.am.d_ff = 8;
    c.am.max_positions = 16;
    c.fm.d_model = 8;
    c.fm.n_layers = 1;
    c.fm.n_heads = 2;
    c.fm.d_ff = 8;
    c.fm.time_dim = 8;
    c.world.max_speakers = 2;
    c.world.max_turns = 2;
    c.world.stage1_min_len = 2;
    c.world.stage1_max_len = 3;
    c.world.stage2_min_turn = 1;
    c.world.stage2_max_turn = 2;
    c.resolve();
    return c;
}

std::vector<NamedGradCheck> gradcheck_suite(double tolerance) {
    const auto cfg = gradcheck_config();
    const train::Models m(cfg);
    const std::vector<toy::Sample> batch{m.world.sample(toy::Stage::Two, toy::Split::Train, 3)};
    std::vector<NamedGradCheck> out;
    auto run = [&](const std::string &name, auto pick) {
        auto ps = m.make_params(11);
        NamedGradCheck r{name, ps.parameter_count(), {}};
        r.report = grad_check(
            [&](const ParameterStore &p) {
                Rng rng(5);
                return pick(train::joint_loss(m, p, batch, 1.0, Mode::E2E, rng));
            },
            ps, tolerance);
        out.push_back(std::move(r));
    };
    run("l_am", [](const train::LossTerms &t) { return t.l_am; });
    run("l_fm", [](const train::LossTerms &t) { return t.l_fm; });
    run("joint", [](const train::LossTerms &t) { return t.total; });

    return out;
}

} // namespace jvtoy::pipe
