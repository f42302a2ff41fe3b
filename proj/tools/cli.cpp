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

#include "cli.hpp"

#include "jvtoy/config.hpp"
#include "jvtoy/evalkit.hpp"
#include "jvtoy/fsq.hpp"
#include "jvtoy/ops.hpp"
#include "jvtoy/pipeline.hpp"
#include "jvtoy/preference.hpp"
#include "jvtoy/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace jvtoy::cli {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::string run_dir = "run";
    std::vector<std::string> sets;
    std::string checkpoint;
    std::size_t chunk_size = 0;  // 0 keeps eval.chunk
    std::size_t euler_steps = 0; // 0 keeps fm.euler_steps
};

void add_common(CLI::App *sub, Common &c, bool model) {
    sub->add_option("--config", c.config, "flat key = value config file (default: <run-dir>/config.echo)");
    sub->add_option("--run-dir", c.run_dir, "run directory")->capture_default_str();
    sub->add_option("--set", c.sets, "override one config key, key=value (repeatable)");
    if (model) {
        sub->add_option("--checkpoint", c.checkpoint, "checkpoint base (default: <run-dir>/checkpoints/final)");
        sub->add_option("--chunk-size", c.chunk_size, "FM streaming chunk in frames at inference (sets eval.chunk)");
        sub->add_option("--euler-steps", c.euler_steps, "Euler steps at inference (sets fm.euler_steps)");
    }
}

// fresh: commands that do not load a model may start from the built-in defaults
RunConfig load(const Common &c, bool fresh = false) {
    RunConfig cfg;
    if (!c.config.empty()) {
        cfg = load_config(c.config);
    } else if (fs::exists(fs::path(c.run_dir) / "config.echo")) {
        cfg = load_config(fs::path(c.run_dir) / "config.echo");
    } else if (!fresh) {
        throw UsageError("no --config given and " + (fs::path(c.run_dir) / "config.echo").string() + " does not exist");
    }
    for (const auto &kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.chunk_size > 0) {
        cfg.eval_chunk = c.chunk_size;
    }
    if (c.euler_steps > 0) {
        cfg.fm.euler_steps = c.euler_steps;
    }
    cfg.resolve();
    return cfg;
}

fs::path reports(const Common &c) {
    const auto p = fs::path(c.run_dir) / "reports";
    fs::create_directories(p);
    return p;
}

void write_text(const fs::path &p, const std::string &text) {
    std::ofstream f(p);
    f << text;
    if (!f) {
        throw std::runtime_error("cannot write " + p.string());
    }
}

void echo(const Common &c, const RunConfig &cfg, const std::string &name) {
    write_text(reports(c) / (name + ".config.echo"), echo_config(cfg));
}

ParameterStore load_model(const train::Models &m, const RunConfig &cfg, const Common &c) {
    const fs::path base = c.checkpoint.empty() ? fs::path(c.run_dir) / "checkpoints" / "final" : fs::path(c.checkpoint);
    if (!fs::exists(base.string() + ".manifest")) {
        throw UsageError("checkpoint " + base.string() + " not found (run `train` first or pass --checkpoint)");
    }
    auto ps = m.make_params(cfg.seed);
    load_checkpoint(base, ps);
    return ps;
}

std::string fmt(const char *f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string join(const std::vector<int> &v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? " " : "") + std::to_string(v[i]);
    }
    return s;
}

void train_tokenizer(const RunConfig &cfg, const train::Models &m, const fs::path &run, std::ostream &out) {
    fsq::TokenizerConfig tc;
    tc.fsq = cfg.fsq;
    tc.d_in = cfg.world.d_mel;
    tc.n_classes = 96; // largest ideal token id + 1
    const fsq::Tokenizer tok(tc);
    ParameterStore ps(mix_seed(cfg.seed, 0x544f4bULL));
    tok.init(ps);
    AdamW opt;
    std::ofstream log(run / "reports" / "tokenizer.tsv");
    log << "step\ttotal\tsemantic\trecon\n";
    const std::size_t warm = std::max<std::size_t>(1, cfg.tokenizer_steps / 10);
    for (std::size_t step = 0; step < cfg.tokenizer_steps; ++step) {
        std::vector<fsq::TokenizerExample> batch;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto s =
                m.world.sample(toy::Stage::One, toy::Split::Train, mix_seed(cfg.seed ^ 0x544fULL, step * 64 + b));
            fsq::TokenizerExample ex{s.frames, {}};
            for (int t : s.tokens) {
                ex.labels.push_back(static_cast<std::size_t>(t));
            }
            batch.push_back(std::move(ex));
        }
        ps.zero_grad();
        const auto l = tok.loss(ps, batch);
        backward(l.total);
        clip_grad_norm(ps, cfg.grad_clip);
        opt.step(ps, train::lr_at(step + 1, std::min(warm, cfg.tokenizer_steps), cfg.tokenizer_steps, cfg.tokenizer_lr));
        char buf[120];
        std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\n", step + 1, l.total.item(), l.semantic.item(),
                      l.recon.item());
        log << buf;
    }
    save_checkpoint(run / "checkpoints" / "tokenizer", ps, &opt);
    out << "tokenizer: " << cfg.tokenizer_steps << " steps, log in reports/tokenizer.tsv\n";
}

int cmd_train(const Common &c, std::ostream &out) {
    const auto cfg = load(c, true);
    const fs::path run(c.run_dir);
    fs::create_directories(run / "reports");
    fs::create_directories(run / "checkpoints");
    write_text(run / "config.echo", echo_config(cfg));
    const train::Models m(cfg);
    if (cfg.tokenizer_steps > 0) {
        train_tokenizer(cfg, m, run, out);
    }
    auto ps = m.make_params(cfg.seed);
    std::ofstream metrics(run / "metrics.tsv");
    const auto res = train::train(m, train::TrainConfig::from(cfg), ps, run, &metrics);
    if (!metrics) {
        throw std::runtime_error("cannot write " + (run / "metrics.tsv").string());
    }
    const auto &last = res.log.back();
    out << "train: " << res.log.size() << " steps, final loss " << fmt("%.4f", last.loss) << " (l_am "
        << fmt("%.4f", last.l_am) << ", l_fm " << fmt("%.4f", last.l_fm) << "), checkpoint "
        << (run / "checkpoints" / "final").string() << "\n";
    return 0;
}

int cmd_eval_files(const Common &c, const std::string &metric, const std::string &ref, const std::string &hyp,
                   const std::string &unit, std::ostream &out) {
    auto open = [](const std::string &p) {
        std::ifstream f(p);
        if (!f) {
            throw UsageError("cannot open " + p);
        }
        return f;
    };
    eval::MetricReport r;
    if (metric == "cpwer") {
        auto rf = open(ref);
        auto hf = open(hyp);
        const auto u = unit == "char" ? eval::TokenUnit::Char : eval::TokenUnit::Word;
        r = eval::cpwer(eval::read_transcripts(rf, u), eval::read_transcripts(hf, u));
    } else {
        auto rf = open(ref);
        auto hf = open(hyp);
        std::string rl, hl;
        eval::EditCounts sum;
        std::size_t len = 0, lineno = 0;
        while (std::getline(rf, rl)) {
            ++lineno;
            if (!std::getline(hf, hl)) {
                throw UsageError("hypothesis file has fewer lines than the reference (line " + std::to_string(lineno) +
                                 ")");
            }
            const bool chars = metric == "cer";
            const auto rt = chars ? eval::char_tokens(rl) : eval::word_tokens(rl);
            const auto ht = chars ? eval::char_tokens(hl) : eval::word_tokens(hl);
            const auto e = eval::edit_distance(rt, ht);
            sum.sub += e.sub;
            sum.del += e.del;
            sum.ins += e.ins;
            len += rt.size();
        }
        if (std::getline(hf, hl)) {
            throw UsageError("hypothesis file has more lines than the reference");
        }
        r = eval::rate_report(sum, len);
    }
    std::ostringstream s;
    s << metric << '\t' << fmt("%.6f", r.rate) << "\nsub\t" << r.counts.sub << "\ndel\t" << r.counts.del << "\nins\t"
      << r.counts.ins << "\nref_len\t" << r.ref_len << '\n';
    if (!r.assignment.empty()) {
        s << "assignment\t" << join(r.assignment) << '\n';
    }
    out << s.str();
    write_text(reports(c) / ("eval_" + metric + ".tsv"), s.str());
    return 0;
}

int cmd_eval_model(const Common &c, std::ostream &out) {
    const auto cfg = load(c);
    const train::Models m(cfg);
    const auto ps = load_model(m, cfg, c);
    echo(c, cfg, "eval");
    const auto r = pipe::evaluate(m, ps, cfg);
    std::ostringstream s;
    pipe::write_report(s, r);
    write_text(reports(c) / "eval.tsv", s.str());
    out << "eval on " << r.prompts.size() << " held-out prompts: token CER " << fmt("%.4f", r.token_cer)
        << ", frame CER " << fmt("%.4f", r.frame_cer) << ", cpCER " << fmt("%.4f", r.cpcer) << ", speaker acc "
        << fmt("%.3f", r.speaker_acc) << ", held-out L_FM " << fmt("%.4f", r.fm_loss) << "\n";
    return 0;
}

int cmd_sample(const Common &c, std::size_t speakers, std::size_t turns, std::uint64_t seed, std::ostream &out) {
    const auto cfg = load(c);
    const train::Models m(cfg);
    const auto ps = load_model(m, cfg, c);
    echo(c, cfg, "sample");
    const auto script = m.world.draw_script(speakers, turns, seed);
    const auto profiles = m.world.draw_profiles(speakers, seed);
    pipe::SynthOptions opt;
    opt.decode = cfg.decode;
    opt.decode.seed = seed;
    opt.chunk = cfg.eval_chunk;
    opt.euler_steps = cfg.fm.euler_steps;
    opt.seed = seed;
    const auto syn = pipe::synthesize(m, ps, profiles, script, opt);

    const auto ref = toy::script_symbols(script);
    const double token_cer = eval::error_rate(ref, syn.symbols).rate;
    const double frame_cer = eval::error_rate(ref, syn.heard.symbols).rate;
    const auto cp = eval::cpwer(pipe::reference_transcripts(script),
                                pipe::hypothesis_transcripts(syn.symbols, syn.symbol_speakers));
    std::ostringstream s;
    s << "# script\n";
    seq::write_script(s, script, toy::kAlphabet);
    s << "# tokens (" << syn.tokens.size() << (syn.hit_eos ? ", EOS" : ", no EOS") << ")\n" << join(syn.tokens) << '\n';
    s << "# transcript (token inverse map, speakers read from frames)\n";
    for (std::size_t j = 0; j < syn.symbols.size(); ++j) {
        if (j == 0 || syn.symbol_speakers[j] != syn.symbol_speakers[j - 1]) {
            s << (j ? "\n" : "") << "SPK" << syn.symbol_speakers[j] << ":";
        }
        s << ' ' << toy::kAlphabet[static_cast<std::size_t>(syn.symbols[j])];
    }
    s << "\n# scores\ntoken_cer\t" << fmt("%.6f", token_cer) << "\nframe_cer\t" << fmt("%.6f", frame_cer)
      << "\ncpcer\t" << fmt("%.6f", cp.rate) << "\nspeaker_acc\t"
      << fmt("%.6f", pipe::speaker_turn_accuracy(script, syn.symbol_speakers)) << '\n';
    s << "# frames (" << syn.frames.rows() << " x " << cfg.world.d_mel << ")\n";
    for (std::size_t r = 0; r < syn.frames.rows(); ++r) {
        for (std::size_t j = 0; j < syn.frames.cols(); ++j) {
            s << (j ? "\t" : "") << fmt("%.6g", syn.frames.at(r, j));
        }
        s << '\n';
    }
    const std::string stem =
        "sample_s" + std::to_string(speakers) + "_t" + std::to_string(turns) + "_seed" + std::to_string(seed);
    const auto path = reports(c) / (stem + ".txt");
    write_text(path, s.str());
    // frames again in the tensor blob format
    if (syn.frames.defined()) {
        save_tensors(reports(c) / (stem + ".frames"), {{"frames", syn.frames}});
    }
    out << "sample: " << speakers << " speakers, " << turns << " turns, " << syn.tokens.size()
        << " tokens; token CER " << fmt("%.4f", token_cer) << ", cpCER " << fmt("%.4f", cp.rate) << " -> "
        << path.string() << "\n";
    return 0;
}

int cmd_apo(const Common &c, std::ostream &out) {
    const auto cfg = load(c);
    const train::Models m(cfg);
    const auto ps = load_model(m, cfg, c);
    echo(c, cfg, "apo-pairs");
    const auto round = pref::apo_round(m, ps, pref::ApoConfig::from(cfg));
    std::ostringstream pairs, stats;
    pref::write_pairs(pairs, round.pairs);
    stats << "prompt\tunique\tchosen\trejected\tpairs\n";
    for (const auto &st : round.stats) {
        stats << st.prompt_id << '\t' << st.unique << '\t' << st.chosen << '\t' << st.rejected << '\t' << st.pairs
              << '\n';
    }
    stats << "# yield\t" << fmt("%.6f", round.yield) << '\n';
    write_text(reports(c) / "apo_pairs.tsv", pairs.str());
    write_text(reports(c) / "apo_stats.tsv", stats.str());
    out << "apo-pairs: " << round.pairs.size() << " pairs from " << round.stats.size() << " prompts, yield "
        << fmt("%.3f", round.yield) << "\n";
    return 0;
}

int cmd_dpo(const Common &c, const std::string &pairs_path, std::ostream &out) {
    const auto cfg = load(c);
    const train::Models m(cfg);
    auto policy = load_model(m, cfg, c);
    const auto reference = policy.clone();
    echo(c, cfg, "dpo-train");
    const fs::path pp = pairs_path.empty() ? reports(c) / "apo_pairs.tsv" : fs::path(pairs_path);
    std::ifstream in(pp);
    if (!in) {
        throw UsageError("cannot open pairs file " + pp.string() + " (run `apo-pairs` first)");
    }
    const auto pairs = pref::read_pairs(in);
    if (pairs.empty()) {
        throw UsageError("pairs file " + pp.string() + " is empty");
    }
    const auto before = pipe::evaluate(m, reference, cfg);
    const auto log = pref::dpo_train(m, policy, reference, pairs, pref::DpoConfig::from(cfg));
    const auto after = pipe::evaluate(m, policy, cfg);
    std::ostringstream s;
    s << "step\tloss\tmargin\n";
    for (const auto &r : log) {
        s << r.step << '\t' << fmt("%.9g", r.loss) << '\t' << fmt("%.9g", r.margin) << '\n';
    }
    write_text(reports(c) / "dpo_metrics.tsv", s.str());
    std::ostringstream e;
    e << "metric\tbefore\tafter\ntoken_cer\t" << fmt("%.6f", before.token_cer) << '\t' << fmt("%.6f", after.token_cer)
      << "\nframe_cer\t" << fmt("%.6f", before.frame_cer) << '\t' << fmt("%.6f", after.frame_cer) << "\ncpcer\t"
      << fmt("%.6f", before.cpcer) << '\t' << fmt("%.6f", after.cpcer) << '\n';
    write_text(reports(c) / "dpo_eval.tsv", e.str());
    save_checkpoint(fs::path(c.run_dir) / "checkpoints" / "dpo", policy);
    out << "dpo-train: " << pairs.size() << " pairs, " << log.size() << " steps; held-out token CER "
        << fmt("%.4f", before.token_cer) << " -> " << fmt("%.4f", after.token_cer) << "\n";
    return 0;
}

int cmd_gradcheck(const Common &c, double tol, std::ostream &out) {
    const auto suite = pipe::gradcheck_suite(tol);
    std::ostringstream s;
    s << "check\tparameters\tworst_rel_err\ttolerance\tpass\n";
    bool ok = true;
    for (const auto &r : suite) {
        s << r.name << '\t' << r.parameters << '\t' << fmt("%.3e", r.report.worst_rel_err) << '\t' << fmt("%.0e", tol)
          << '\t' << (r.report.pass ? "pass" : "FAIL") << '\n';
        ok = ok && r.report.pass;
        for (const auto &e : r.report.entries) {
            if (!e.pass) {
                s << "#  " << r.name << ": " << e.name << " rel err " << fmt("%.3e", e.max_rel_err) << '\n';
            }
        }
    }
    write_text(reports(c) / "gradcheck.tsv", s.str());
    out << s.str();
    return ok ? 0 : 1;
}

int cmd_gen_data(const Common &c, int stage, const std::string &split, std::size_t count, bool frames,
                 std::ostream &out) {
    const auto cfg = load(c, true);
    const train::Models m(cfg);
    echo(c, cfg, "gen-data");
    if (stage != 1 && stage != 2) {
        throw UsageError("--stage must be 1 or 2");
    }
    if (split != "train" && split != "heldout") {
        throw UsageError("--split must be train or heldout");
    }
    const auto st = stage == 1 ? toy::Stage::One : toy::Stage::Two;
    const auto sp = split == "train" ? toy::Split::Train : toy::Split::Heldout;
    std::ostringstream s;
    for (std::size_t i = 0; i < count; ++i) {
        const auto smp = m.world.sample(st, sp, i);
        s << "# sample " << i << " speakers " << smp.script.num_speakers << " symbols " << smp.script.text_length()
          << " tokens " << smp.tokens.size() << " frames " << smp.frames.rows() << '\n';
        seq::write_script(s, smp.script, toy::kAlphabet);
        s << seq::render(m.sequence(smp));
        if (frames) {
            for (std::size_t r = 0; r < smp.frames.rows(); ++r) {
                s << "frame";
                for (std::size_t j = 0; j < smp.frames.cols(); ++j) {
                    s << '\t' << fmt("%.6g", smp.frames.at(r, j));
                }
                s << '\n';
            }
        }
    }
    const auto path = reports(c) / ("data_stage" + std::to_string(stage) + "_" + split + ".txt");
    write_text(path, s.str());
    out << "gen-data: " << count << " samples -> " << path.string() << "\n";
    return 0;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"jvtoy: toy joint AM + flow-matching speech pipeline"};
    app.require_subcommand(1);
    Common common;

    auto *train = app.add_subcommand("train", "train AM + FM through the curriculum stages");
    add_common(train, common, false);

    auto *ev = app.add_subcommand("eval", "score files (--metric) or evaluate a checkpoint on held-out prompts");
    add_common(ev, common, true);
    std::string metric, ref, hyp, unit = "word";
    ev->add_option("--metric", metric, "cer | wer | cpwer")->check(CLI::IsMember({"cer", "wer", "cpwer"}));
    ev->add_option("--ref", ref, "reference file");
    ev->add_option("--hyp", hyp, "hypothesis file");
    ev->add_option("--unit", unit, "cpwer token unit: word | char")->check(CLI::IsMember({"word", "char"}));

    auto *sample = app.add_subcommand("sample", "synthesize one dialogue");
    add_common(sample, common, true);
    std::size_t speakers = 2, turns = 4;
    std::uint64_t seed = 1;
    sample->add_option("--speakers", speakers, "number of speakers")->check(CLI::Range(1, 8));
    sample->add_option("--turns", turns, "number of turns")->check(CLI::Range(1, 64));
    sample->add_option("--seed", seed, "script, speaker and decode seed");

    auto *apo = app.add_subcommand("apo-pairs", "sample candidates and build preference pairs");
    add_common(apo, common, true);
    std::string apo_n, apo_t;
    apo->add_option("--n", apo_n, "candidates per prompt (apo.n)");
    apo->add_option("--temperature", apo_t, "decode temperature (apo.temperature)");

    auto *dpo = app.add_subcommand("dpo-train", "one DPO pass over harvested pairs");
    add_common(dpo, common, true);
    std::string pairs_path;
    dpo->add_option("--pairs", pairs_path, "pairs file (default: <run-dir>/reports/apo_pairs.tsv)");

    auto *gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    add_common(gc, common, false);
    double tol = 1e-3;
    gc->add_option("--tolerance", tol, "relative tolerance")->capture_default_str();

    auto *gen = app.add_subcommand("gen-data", "write toy-world samples");
    add_common(gen, common, false);
    int stage = 1;
    std::string split = "train";
    std::size_t count = 10;
    bool frames = false;
    gen->add_option("--stage", stage, "1 or 2")->capture_default_str();
    gen->add_option("--split", split, "train | heldout")->capture_default_str();
    gen->add_option("--count", count, "number of samples")->capture_default_str();
    gen->add_flag("--frames", frames, "also write frame matrices");

    std::vector<const char *> argv;
    for (const auto &a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        return app.exit(e, out, err);
    }

    try {
        if (train->parsed()) {
            return cmd_train(common, out);
        }
        if (ev->parsed()) {
            if (!metric.empty()) {
                if (ref.empty() || hyp.empty()) {
                    throw UsageError("--metric needs --ref and --hyp");
                }
                return cmd_eval_files(common, metric, ref, hyp, unit, out);
            }
            return cmd_eval_model(common, out);
        }
        if (sample->parsed()) {
            return cmd_sample(common, speakers, turns, seed, out);
        }
        if (apo->parsed()) {
            if (!apo_n.empty()) {
                common.sets.push_back("apo.n=" + apo_n);
            }
            if (!apo_t.empty()) {
                common.sets.push_back("apo.temperature=" + apo_t);
            }
            return cmd_apo(common, out);
        }
        if (dpo->parsed()) {
            return cmd_dpo(common, pairs_path, out);
        }
        if (gc->parsed()) {
            return cmd_gradcheck(common, tol, out);
        }
        if (gen->parsed()) {
            return cmd_gen_data(common, stage, split, count, frames, out);
        }
    } catch (const ConfigError &e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const UsageError &e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

} // namespace jvtoy::cli
