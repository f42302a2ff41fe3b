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

#include "jvtoy/ar_model.hpp"

#include "jvtoy/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace jvtoy::am {

using seq::Kind;
using seq::UnifiedSequence;

namespace {

// Segment ids: P, T, then one id per speech phase within a symbol.
constexpr std::size_t kSegP = 0;
constexpr std::size_t kSegT = 1;
constexpr std::size_t kSegS = 2;

std::string layer_name(std::size_t l) { return "am.block" + std::to_string(l); }

} // namespace

void ArConfig::validate() const {
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw std::invalid_argument("am: d_model must be divisible by n_heads");
    }
    if (speech_vocab < 2 || text_vocab == 0 || tokens_per_symbol == 0) {
        throw std::invalid_argument("am: vocabularies and tokens_per_symbol must be positive");
    }
}

ArModel::ArModel(ArConfig cfg) : cfg_(cfg), block_{cfg.d_model, cfg.n_heads, cfg.d_ff} { cfg_.validate(); }

void ArModel::init(ParameterStore &ps) const {
    const std::size_t d = cfg_.d_model;
    ps.add("am.tag_emb", {cfg_.max_speakers, d});
    ps.add("am.text_emb", {cfg_.text_vocab, d});
    ps.add("am.turn_emb", {cfg_.max_speakers, d});
    ps.add("am.speech_emb", {cfg_.speech_vocab, d});
    ps.add("am.pos_emb", {cfg_.max_positions, d});
    ps.add("am.seg_emb", {kSegS + cfg_.tokens_per_symbol, d});
    nn::init_linear(ps, "am.spk_proj", cfg_.d_spk, d);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        nn::init_block(ps, layer_name(l), block_);
    }
    nn::init_norm(ps, "am.ln_f", d);
    nn::init_linear(ps, "am.head", d, cfg_.speech_vocab);
}

std::vector<std::size_t> ArModel::position_ids(const UnifiedSequence &seq) const {
    std::vector<std::size_t> pos(seq.size(), 0);
    // Text positions count text symbols; a turn tag takes the id of the
    // symbol that follows it. Speech positions restart and advance once per
    // symbol worth of tokens.
    std::size_t ordinal = 0;
    for (std::size_t i = seq.t.begin; i < seq.t.end; ++i) {
        pos[i] = ordinal;
        if (seq.elements[i].kind == Kind::Text) {
            ++ordinal;
        }
    }
    for (std::size_t i = seq.s.begin; i < seq.s.end; ++i) {
        pos[i] = (i - seq.s.begin) / cfg_.tokens_per_symbol;
    }
    for (std::size_t p : pos) {
        if (p >= cfg_.max_positions) {
            throw std::invalid_argument("am: position " + std::to_string(p) + " exceeds max_positions " +
                                        std::to_string(cfg_.max_positions));
        }
    }
    return pos;
}

std::vector<std::size_t> ArModel::segment_ids(const UnifiedSequence &seq) const {
    std::vector<std::size_t> seg(seq.size(), kSegP);
    for (std::size_t i = seq.t.begin; i < seq.t.end; ++i) {
        seg[i] = kSegT;
    }
    for (std::size_t i = seq.s.begin; i < seq.s.end; ++i) {
        seg[i] = kSegS + (i - seq.s.begin) % cfg_.tokens_per_symbol;
    }
    return seg;
}

Tensor ArModel::embed(const ParameterStore &ps, const UnifiedSequence &seq, std::size_t begin, std::size_t end) const {
    const std::size_t n = end - begin;
    const auto pos_all = position_ids(seq);
    const auto seg_all = segment_ids(seq);
    // Rows are gathered per source table and then put back in sequence order.
    std::vector<std::size_t> tag_ids, text_ids, text_turn, speech_ids, emb_rows;
    // Speaker of the turn each text element belongs to.
    std::vector<std::size_t> turn_speaker(end, 0);
    std::size_t current = 0;
    for (std::size_t i = seq.t.begin; i < std::min(end, seq.t.end); ++i) {
        if (seq.elements[i].kind == Kind::SpkTag) {
            current = static_cast<std::size_t>(seq.elements[i].value);
        }
        turn_speaker[i] = current;
    }
    std::vector<std::pair<int, std::size_t>> where(n);
    for (std::size_t i = begin; i < end; ++i) {
        const auto &e = seq.elements[i];
        const auto v = static_cast<std::size_t>(e.value);
        switch (e.kind) {
        case Kind::SpkTag:
            if (e.value < 0 || v >= cfg_.max_speakers) {
                throw std::invalid_argument("am: speaker tag out of range");
            }
            where[i - begin] = {0, tag_ids.size()};
            tag_ids.push_back(v);
            break;
        case Kind::Text:
            if (e.value < 0 || v >= cfg_.text_vocab) {
                throw std::invalid_argument("am: text token " + std::to_string(e.value) + " out of vocabulary");
            }
            where[i - begin] = {1, text_ids.size()};
            text_ids.push_back(v);
            text_turn.push_back(turn_speaker[i]);
            break;
        case Kind::Speech:
            if (e.value < 0 || v >= cfg_.speech_vocab) {
                throw std::invalid_argument("am: speech token " + std::to_string(e.value) + " out of vocabulary");
            }
            where[i - begin] = {2, speech_ids.size()};
            speech_ids.push_back(v);
            break;
        case Kind::SpkEmb:
            where[i - begin] = {3, emb_rows.size()};
            emb_rows.push_back(v);
            break;
        }
    }
    std::vector<Tensor> parts;
    std::vector<std::size_t> offsets(4, 0);
    std::size_t off = 0;
    auto push = [&](int which, Tensor t) {
        offsets[static_cast<std::size_t>(which)] = off;
        off += t.rows();
        parts.push_back(std::move(t));
    };
    if (!tag_ids.empty()) {
        push(0, embedding_lookup(ps.get("am.tag_emb"), tag_ids));
    }
    if (!text_ids.empty()) {
        push(1, add(embedding_lookup(ps.get("am.text_emb"), text_ids),
                    embedding_lookup(ps.get("am.turn_emb"), text_turn)));
    }
    if (!speech_ids.empty()) {
        push(2, embedding_lookup(ps.get("am.speech_emb"), speech_ids));
    }
    if (!emb_rows.empty()) {
        std::vector<double> e;
        for (std::size_t k : emb_rows) {
            const auto &v = seq.embeddings.at(k);
            if (v.size() != cfg_.d_spk) {
                throw ShapeError("am: speaker embedding has dimension " + std::to_string(v.size()) + ", expected " +
                                 std::to_string(cfg_.d_spk));
            }
            e.insert(e.end(), v.begin(), v.end());
        }
        // An embedding slot also carries its speaker's tag so later positions can look it up by tag.
        push(3, add(nn::linear(ps, "am.spk_proj", Tensor::from({emb_rows.size(), cfg_.d_spk}, std::move(e))),
                    embedding_lookup(ps.get("am.tag_emb"), emb_rows)));
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = offsets[static_cast<std::size_t>(where[i].first)] + where[i].second;
    }
    const Tensor tokens = select_rows(parts.size() == 1 ? parts[0] : concat_rows(parts), order);
    const std::vector<std::size_t> pos(pos_all.begin() + static_cast<std::ptrdiff_t>(begin),
                                       pos_all.begin() + static_cast<std::ptrdiff_t>(end));
    const std::vector<std::size_t> seg(seg_all.begin() + static_cast<std::ptrdiff_t>(begin),
                                       seg_all.begin() + static_cast<std::ptrdiff_t>(end));
    return add(add(tokens, embedding_lookup(ps.get("am.pos_emb"), pos)), embedding_lookup(ps.get("am.seg_emb"), seg));
}

Tensor ArModel::states(const ParameterStore &ps, const UnifiedSequence &seq) const {
    if (seq.size() > cfg_.max_len) {
        throw std::invalid_argument("am: sequence length " + std::to_string(seq.size()) + " exceeds max_len " +
                                    std::to_string(cfg_.max_len));
    }
    if (seq.use_spk_embeddings != cfg_.use_spk_embeddings) {
        throw std::invalid_argument("am: sequence and model disagree on use_spk_embeddings");
    }
    Tensor x = embed(ps, seq, 0, seq.size());
    const AttentionMask mask = AttentionMask::causal(seq.size());
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        x = nn::block(ps, layer_name(l), block_, x, mask);
    }
    return nn::norm(ps, "am.ln_f", x);
}

Tensor ArModel::head_logits(const ParameterStore &ps, const Tensor &hidden) const {
    return nn::linear(ps, "am.head", hidden);
}

AmOutput ArModel::forward(const ParameterStore &ps, const UnifiedSequence &seq) const {
    if (seq.s.size() == 0) {
        throw std::invalid_argument("am: sequence has no speech segment");
    }
    const Tensor h = states(ps, seq);
    std::vector<std::size_t> rows(seq.s.size());
    std::iota(rows.begin(), rows.end(), seq.s.begin - 1);
    AmOutput out;
    out.hidden = select_rows(h, rows);
    out.logits = head_logits(ps, out.hidden);
    return out;
}

SampleResult ArModel::sample(const ParameterStore &ps, const UnifiedSequence &prefix, const DecodeConfig &dc) const {
    if (prefix.s.size() != 0) {
        throw std::invalid_argument("am: sampling prefix must not contain speech tokens");
    }
    NoGradScope no_grad;
    const std::size_t cap =
        dc.max_tokens > 0 ? dc.max_tokens : 4 * std::max<std::size_t>(1, expected_tokens(prefix, cfg_.tokens_per_symbol));
    Rng rng(mix_seed(dc.seed, 0x5a4d504c45ULL));
    std::vector<nn::LayerCache> cache(cfg_.n_layers);
    UnifiedSequence work = prefix;

    auto run = [&](std::size_t begin, std::size_t end) {
        Tensor x = embed(ps, work, begin, end);
        AttentionMask mask(end - begin, end, true);
        for (std::size_t i = 0; i < end - begin; ++i) {
            for (std::size_t j = begin + i + 1; j < end; ++j) {
                mask.set(i, j, false);
            }
        }
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
            x = nn::block(ps, layer_name(l), block_, x, mask, &cache[l]);
        }
        return nn::norm(ps, "am.ln_f", slice_rows(x, x.rows() - 1, 1));
    };

    SampleResult out;
    std::vector<Tensor> hidden_rows;
    Tensor h = run(0, work.size());
    while (true) {
        if (work.size() >= cfg_.max_len) {
            out.capped = true;
            break;
        }
        const Tensor logit_row = head_logits(ps, h);
        const auto logits = logit_row.data();
        const std::size_t v = logits.size();
        int next = 0;
        if (dc.temperature <= 0.0) {
            next = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        } else {
            std::vector<std::size_t> idx(v);
            std::iota(idx.begin(), idx.end(), 0);
            std::size_t keep = v;
            if (dc.top_k > 0 && dc.top_k < v) {
                keep = dc.top_k;
                std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                                  [&](std::size_t a, std::size_t b) {
                                      return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
                                  });
                std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep));
            }
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < keep; ++i) {
                mx = std::max(mx, logits[idx[i]] / dc.temperature);
            }
            std::vector<double> w(keep);
            double total = 0.0;
            for (std::size_t i = 0; i < keep; ++i) {
                w[i] = std::exp(logits[idx[i]] / dc.temperature - mx);
                total += w[i];
            }
            double u = rng.uniform() * total;
            next = static_cast<int>(idx[keep - 1]);
            for (std::size_t i = 0; i < keep; ++i) {
                if (u < w[i]) {
                    next = static_cast<int>(idx[i]);
                    break;
                }
                u -= w[i];
            }
        }
        if (next == cfg_.eos()) {
            out.hit_eos = true;
            break;
        }
        out.tokens.push_back(next);
        hidden_rows.push_back(h);
        if (out.tokens.size() >= cap) {
            out.capped = true;
            break;
        }
        work.elements.push_back({Kind::Speech, next});
        work.s.end = work.elements.size();
        h = run(work.size() - 1, work.size());
    }
    out.hidden = hidden_rows.empty() ? Tensor::zeros({0, cfg_.d_model}) : concat_rows(hidden_rows);
    return out;
}

Tensor am_loss(const Tensor &logits, const std::vector<int> &targets, const std::vector<bool> &mask) {
    if (targets.size() != logits.rows() || mask.size() != logits.rows()) {
        throw ShapeError("am_loss: logits have " + std::to_string(logits.rows()) + " rows, targets " +
                         std::to_string(targets.size()) + ", mask " + std::to_string(mask.size()));
    }
    if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
        throw std::invalid_argument("am_loss: mask selects no positions");
    }
    std::vector<std::size_t> t(targets.begin(), targets.end());
    return cross_entropy(logits, t, mask);
}

std::size_t expected_tokens(const UnifiedSequence &prefix, std::size_t tokens_per_symbol) {
    std::size_t n = 0;
    for (std::size_t i = prefix.t.begin; i < prefix.t.end; ++i) {
        n += prefix.elements[i].kind == Kind::Text ? 1 : 0;
    }
    return n * tokens_per_symbol;
}

} // namespace jvtoy::am
