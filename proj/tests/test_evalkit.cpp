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

#include "jvtoy/evalkit.hpp"
#include "jvtoy/rng.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

using namespace jvtoy;
using namespace jvtoy::eval;

namespace {

struct Tally {
    std::size_t cost, sub, del, ins;
};

// Walks every alignment path explicitly and keeps the cheapest, most
// substitution-heavy one. Exponential, so only for short inputs.
Tally enumerate_alignments(const std::vector<int> &r, const std::vector<int> &h) {
    Tally best{~std::size_t{0}, 0, 0, 0};
    std::function<void(std::size_t, std::size_t, Tally)> walk = [&](std::size_t i, std::size_t j, Tally t) {
        if (t.cost > best.cost) {
            return;
        }
        if (i == r.size() && j == h.size()) {
            if (t.cost < best.cost || (t.cost == best.cost && t.sub > best.sub)) {
                best = t;
            }
            return;
        }
        if (i < r.size() && j < h.size()) {
            const bool same = r[i] == h[j];
            walk(i + 1, j + 1, {t.cost + (same ? 0 : 1), t.sub + (same ? 0 : 1), t.del, t.ins});
        }
        if (i < r.size()) {
            walk(i + 1, j, {t.cost + 1, t.sub, t.del + 1, t.ins});
        }
        if (j < h.size()) {
            walk(i, j + 1, {t.cost + 1, t.sub, t.del, t.ins + 1});
        }
    };
    walk(0, 0, {0, 0, 0, 0});
    return best;
}

std::vector<int> random_seq(Rng &rng, std::size_t max_len, std::size_t alphabet) {
    std::vector<int> v(rng.uniform_int(max_len + 1));
    for (auto &x : v) {
        x = static_cast<int>(rng.uniform_int(alphabet));
    }
    return v;
}

SpeakerTranscript speaker(std::string id, std::vector<std::string> utts, long first_index = 0) {
    SpeakerTranscript s{std::move(id), {}};
    long k = first_index;
    for (const auto &u : utts) {
        s.utterances.push_back({k, word_tokens(u)});
        k += 2;
    }
    return s;
}

// Independent scorer: recursive assignment over a fully materialized cost
// matrix, recomputing every pairwise distance through the enumerator above.
std::size_t brute_force_cp(const std::vector<std::vector<int>> &refs, const std::vector<std::vector<int>> &hyps) {
    const std::size_t k = std::max(refs.size(), hyps.size());
    auto get = [](const std::vector<std::vector<int>> &v, std::size_t i) {
        return i < v.size() ? v[i] : std::vector<int>{};
    };
    std::vector<std::vector<std::size_t>> cost(k, std::vector<std::size_t>(k));
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            cost[i][j] = enumerate_alignments(get(refs, i), get(hyps, j)).cost;
        }
    }
    std::size_t best = ~std::size_t{0};
    std::vector<bool> used(k, false);
    std::function<void(std::size_t, std::size_t)> assign = [&](std::size_t row, std::size_t acc) {
        if (row == k) {
            best = std::min(best, acc);
            return;
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (!used[j]) {
                used[j] = true;
                assign(row + 1, acc + cost[row][j]);
                used[j] = false;
            }
        }
    };
    assign(0, 0);
    return best;
}

std::vector<std::string> to_words(const std::vector<int> &v) {
    std::vector<std::string> out;
    for (int x : v) {
        out.push_back("w" + std::to_string(x));
    }
    return out;
}

} // namespace

TEST_CASE("edit distance: small fixed cases") {
    const std::vector<std::string> ab{"a", "b"}, abc{"a", "b", "c"};
    CHECK(edit_distance(abc, abc) == EditCounts{0, 0, 0});
    CHECK(edit_distance(ab, abc) == EditCounts{0, 0, 1});
    CHECK(edit_distance(abc, ab) == EditCounts{0, 1, 0});
    const std::vector<std::string> empty;
    CHECK(edit_distance(empty, empty) == EditCounts{0, 0, 0});
    CHECK(edit_distance(empty, ab) == EditCounts{0, 0, 2});
    // "ab" -> "ba": two substitutions and delete+insert both cost 2; substitution wins.
    const std::vector<std::string> ba{"b", "a"};
    CHECK(edit_distance(ab, ba) == EditCounts{2, 0, 0});
}

TEST_CASE("edit distance matches exhaustive alignment enumeration on 200 random pairs") {
    Rng rng(20261018);
    for (int trial = 0; trial < 200; ++trial) {
        const auto r = random_seq(rng, 7, 3);
        const auto h = random_seq(rng, 7, 3);
        const auto got = edit_distance(r, h);
        const auto want = enumerate_alignments(r, h);
        INFO("trial " << trial);
        CHECK(got.total() == want.cost);
        CHECK(got.sub == want.sub);
        CHECK(got.del == want.del);
        CHECK(got.ins == want.ins);
    }
}

TEST_CASE("cer and wer") {
    CHECK(cer("abcd", "abcd").rate == 0.0);
    CHECK(cer("abcd", "abxd").rate == doctest::Approx(0.25));
    CHECK(cer("abcd", "").rate == doctest::Approx(1.0));
    CHECK(cer("abcd", "").counts.del == 4);
    CHECK(wer("the cat sat", "the cat sat on").rate == doctest::Approx(1.0 / 3.0));
    // rate may exceed one
    CHECK(cer("a", "xyz").rate == doctest::Approx(3.0));
    CHECK_THROWS_AS(cer("", "abc"), UndefinedRate);
    CHECK_THROWS_AS(wer("   ", "abc"), UndefinedRate);
}

TEST_CASE("char tokens split UTF-8 code points") {
    const auto t = char_tokens("\xe4\xbd\xa0\xe5\xa5\xbd a");
    REQUIRE(t.size() == 3);
    CHECK(t[0] == "\xe4\xbd\xa0");
    CHECK(t[2] == "a");
    CHECK(cer("\xe4\xbd\xa0\xe5\xa5\xbd", "\xe4\xbd\xa0").rate == doctest::Approx(0.5));
}

TEST_CASE("cpwer fixed cases") {
    SUBCASE("relabeled speakers score zero") {
        std::vector<SpeakerTranscript> ref{speaker("A", {"hi there", "ok"}), speaker("B", {"hello you"}, 1)};
        std::vector<SpeakerTranscript> hyp{speaker("x", {"hello you"}, 1), speaker("y", {"hi there", "ok"})};
        const auto r = cpwer(ref, hyp);
        CHECK(r.rate == 0.0);
        CHECK(r.assignment == std::vector<int>{1, 0});
    }
    SUBCASE("two ref speakers against one hyp speaker") {
        std::vector<SpeakerTranscript> ref{speaker("A", {"a b"}), speaker("B", {"c"})};
        std::vector<SpeakerTranscript> hyp{speaker("h", {"a b c"})};
        const auto r = cpwer(ref, hyp);
        CHECK(r.counts.total() == 2);
        CHECK(r.counts.ins == 1);
        CHECK(r.counts.del == 1);
        CHECK(r.ref_len == 3);
        CHECK(r.rate == doctest::Approx(2.0 / 3.0));
        CHECK(r.assignment == std::vector<int>{0, -1});
    }
    SUBCASE("chronological order drives concatenation") {
        SpeakerTranscript a{"A", {{5, {"c"}}, {1, {"a"}}, {3, {"b"}}}};
        CHECK(a.concatenated() == std::vector<std::string>{"a", "b", "c"});
        SpeakerTranscript dup{"A", {{1, {"a"}}, {1, {"b"}}}};
        CHECK_THROWS_AS(dup.concatenated(), std::invalid_argument);
    }
    SUBCASE("more than eight speakers is rejected") {
        std::vector<SpeakerTranscript> many;
        for (int i = 0; i < 9; ++i) {
            many.push_back(speaker("s" + std::to_string(i), {"w"}));
        }
        CHECK_THROWS_AS(cpwer(many, many), std::invalid_argument);
        std::vector<SpeakerTranscript> eight(many.begin(), many.begin() + 8);
        CHECK(cpwer(eight, eight).rate == 0.0);
    }
}

TEST_CASE("cpwer matches assignment-matrix brute force on 100 random cases") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t nr = 2 + rng.uniform_int(3), nh = 2 + rng.uniform_int(3);
        std::vector<std::vector<int>> r(nr), h(nh);
        std::vector<SpeakerTranscript> rs, hs;
        for (std::size_t i = 0; i < nr; ++i) {
            r[i] = random_seq(rng, 5, 3);
            rs.push_back({"r" + std::to_string(i), {{0, to_words(r[i])}}});
        }
        for (std::size_t i = 0; i < nh; ++i) {
            h[i] = random_seq(rng, 5, 3);
            hs.push_back({"h" + std::to_string(i), {{0, to_words(h[i])}}});
        }
        std::size_t ref_len = 0;
        for (const auto &x : r) {
            ref_len += x.size();
        }
        if (ref_len == 0) {
            CHECK_THROWS_AS(cpwer(rs, hs), UndefinedRate);
            continue;
        }
        const auto got = cpwer(rs, hs);
        INFO("trial " << trial);
        CHECK(got.counts.total() == brute_force_cp(r, h));
        CHECK(got.rate == doctest::Approx(static_cast<double>(brute_force_cp(r, h)) / ref_len));
    }
}

TEST_CASE("cpwer properties") {
    Rng rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(4);
        std::vector<SpeakerTranscript> rs, hs;
        for (std::size_t i = 0; i < n; ++i) {
            auto r = random_seq(rng, 5, 4);
            r.push_back(0);
            rs.push_back({"r" + std::to_string(i), {{0, to_words(r)}, {3, to_words(random_seq(rng, 3, 4))}}});
            hs.push_back({"h" + std::to_string(i), {{1, to_words(random_seq(rng, 6, 4))}}});
        }
        const auto base = cpwer(rs, hs);

        // minimality against the identity assignment
        std::size_t fixed = 0, ref_len = 0;
        for (std::size_t i = 0; i < n; ++i) {
            fixed += edit_distance(rs[i].concatenated(), hs[i].concatenated()).total();
            ref_len += rs[i].concatenated().size();
        }
        CHECK(base.rate <= static_cast<double>(fixed) / ref_len + 1e-12);

        auto hs2 = hs, rs2 = rs;
        std::reverse(hs2.begin(), hs2.end());
        std::rotate(rs2.begin(), rs2.begin() + 1, rs2.end());
        CHECK(cpwer(rs, hs2).counts.total() == base.counts.total());
        CHECK(cpwer(rs2, hs).counts.total() == base.counts.total());

        if (n == 1) {
            CHECK(base.counts == edit_distance(rs[0].concatenated(), hs[0].concatenated()));
        }
    }
}

TEST_CASE("transcript ingestion") {
    std::istringstream in("3\tB\tc d\n0\tA\ta b\r\n\n2\tA\te\n1\tB\tf\n");
    const auto t = read_transcripts(in, TokenUnit::Word);
    REQUIRE(t.size() == 2);
    CHECK(t[0].speaker == "B");
    CHECK(t[0].concatenated() == std::vector<std::string>{"f", "c", "d"});
    CHECK(t[1].concatenated() == std::vector<std::string>{"a", "b", "e"});

    std::istringstream bad("0 A no tabs\n");
    CHECK_THROWS_AS(read_transcripts(bad, TokenUnit::Word), std::invalid_argument);
    std::istringstream chars("0\tA\tab c\n");
    CHECK(read_transcripts(chars, TokenUnit::Char)[0].concatenated().size() == 3);
}
