#include <set>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "rmx/numerics.hpp"
#include "rmx/pattern.hpp"
#include "rmx/rng.hpp"

using namespace rmx;

TEST_SUITE_BEGIN("pattern");

namespace {

std::vector<std::int64_t> positions_of(const AttendedSet& s) {
    std::vector<std::int64_t> p;
    for (const auto& e : s) p.push_back(e.pos);
    return p;
}

}  // namespace

TEST_CASE("dilated indices frozen example") {
    // t=6 with blocks of 4: one completed block (summary at 3) plus self.
    SparsePatternSpec spec;
    spec.dilation = 4;
    const AttendedSet s = dilated_indices(6, spec);
    REQUIRE(s.size() == 2);
    CHECK(s[0].pos == 3);
    CHECK(s[0].label == EntryLabel::BlockSummary);
    CHECK(s[1].pos == 6);
    CHECK(s[1].label == EntryLabel::Self);
}

TEST_CASE("label precedence at overlapping positions") {
    SparsePatternSpec spec;  // dense blocks, one sink, two local
    spec.dilation = 1;
    spec.window = 2;
    spec.sinks = 1;
    const AttendedSet s = dilated_indices(4, spec);
    REQUIRE(s.size() == 5);
    CHECK(s[0].label == EntryLabel::BlockSummary);  // summary outranks sink at 0
    CHECK(s[1].label == EntryLabel::BlockSummary);
    CHECK(s[2].label == EntryLabel::Local);  // local outranks summary
    CHECK(s[3].label == EntryLabel::Local);
    CHECK(s[4].label == EntryLabel::Self);  // self outranks everything
}

TEST_CASE("attended sets are causal, sorted, deduplicated, and end at t") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        SparsePatternSpec spec;
        spec.dilation = rng.uniform_int(1, 8);
        spec.window = rng.uniform_int(0, 5);
        spec.sinks = rng.uniform_int(0, 1) ? 4 : 0;
        const std::int64_t t = rng.uniform_int(0, 70);
        const AttendedSet s = dilated_indices(t, spec);
        REQUIRE(!s.empty());
        CHECK(s.back().pos == t);
        CHECK(s.back().label == EntryLabel::Self);
        std::set<std::int64_t> seen;
        for (const auto& e : s) {
            CHECK(e.pos >= 0);
            CHECK(e.pos <= t);
            CHECK(seen.insert(e.pos).second);  // strictly increasing, no dups
        }
        for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i - 1].pos < s[i].pos);
    }
}

TEST_CASE("cache entry counts at frozen points") {
    SparsePatternSpec spec;
    spec.dilation = 16;
    spec.sinks = 4;
    // 4 sinks + 256 summaries + state.
    CHECK(expected_cache_entries(4096, spec) == 261);
    CHECK(expected_cache_entries(4095, spec) == 261);

    SparsePatternSpec dense;  // D=1 stores everything
    CHECK(expected_cache_entries(10, dense) == 12);

    SparsePatternSpec sink_only;
    sink_only.dilation = 16;
    sink_only.sinks = 4;
    CHECK(expected_cache_entries(0, sink_only) == 2);  // position 0 plus state

    SparsePatternSpec windowed;
    windowed.dilation = 16;
    windowed.window = 8;
    // summaries {15,31,...,95} = 6, ring {93..100} = 8, overlap {95} = 1.
    CHECK(expected_cache_entries(100, windowed) == 14);
}

TEST_CASE("attended set size accounts for every live cache slot") {
    // Stored-position bookkeeping: the set differs from the store only at t
    // itself, which is stored when it is a sink or a block end.
    Rng rng(32);
    for (int trial = 0; trial < 300; ++trial) {
        SparsePatternSpec spec;
        spec.dilation = rng.uniform_int(1, 9);
        spec.sinks = rng.uniform_int(0, 1) ? 4 : 0;
        const std::int64_t t = rng.uniform_int(0, 120);
        const auto as = dilated_indices(t, spec);
        const std::int64_t expected = expected_cache_entries(t, spec);
        const bool t_stored = t < spec.sinks || t % spec.dilation == spec.dilation - 1;
        const std::int64_t want = static_cast<std::int64_t>(as.size()) + (t_stored ? 1 : 0);
        CHECK(expected == want);
    }
}

TEST_CASE("quest and moba scores frozen examples") {
    const std::vector<double> q = {1.0, -1.0};
    const std::vector<double> bmin = {0.0, -1.0};
    const std::vector<double> bmax = {3.0, 2.0};
    CHECK(quest_block_score(q, bmin, bmax) == doctest::Approx(4.0));
    const std::vector<double> bmean = {1.5, 0.5};
    CHECK(moba_block_score(q, bmean) == doctest::Approx(1.0));
}

TEST_CASE("quest score bounds the exact block maximum") {
    Rng rng(33);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t d = 8;
        Array keys({16, d});
        for (auto& v : keys.flat()) v = rng.normal(0.0, 2.0);
        std::vector<double> q(d);
        for (auto& v : q) v = rng.normal(0.0, 2.0);
        const BlockStats st = block_key_stats(keys, 16);
        const double bound = quest_block_score(q, st.min.row(0), st.max.row(0));
        for (std::size_t p = 0; p < 16; ++p) {
            CHECK(dot(q, keys.row(p)) <= bound + 1e-12);
        }
    }
}

TEST_CASE("block stats cover partial trailing blocks") {
    Array keys = Array::from({5, 1}, {1.0, 3.0, -2.0, 10.0, 20.0});
    const BlockStats st = block_key_stats(keys, 3);
    REQUIRE(st.n_blocks() == 2);
    CHECK(st.min(0, 0) == -2.0);
    CHECK(st.max(0, 0) == 3.0);
    CHECK(st.mean(0, 0) == doctest::Approx(2.0 / 3.0));
    CHECK(st.min(1, 0) == 10.0);
    CHECK(st.max(1, 0) == 20.0);
    CHECK(st.mean(1, 0) == 15.0);
}

TEST_CASE("top-k selection keeps the first and current blocks and ranks the rest") {
    TopkSpec tk;
    tk.block_size = 4;
    tk.k = 3;
    tk.scoring = Scoring::Moba;
    // Means: block1 = 5, block2 = -1, block3 = 2 (block0/4 forced anyway).
    Array keys({20, 1});
    const double means[] = {0.0, 5.0, -1.0, 2.0, 0.0};
    for (std::size_t p = 0; p < 20; ++p) keys(p, 0) = means[p / 4];
    const BlockStats st = block_key_stats(keys, 4);
    const std::vector<double> q = {1.0};
    const auto sel = select_topk_blocks(17, q, st, tk);
    CHECK((sel == std::vector<std::int64_t>{0, 1, 4}));

    // With a negative query the ranking flips.
    const std::vector<double> qn = {-1.0};
    const auto seln = select_topk_blocks(17, qn, st, tk);
    CHECK((seln == std::vector<std::int64_t>{0, 2, 4}));
}

TEST_CASE("top-k selection tie-break prefers earlier blocks") {
    TopkSpec tk;
    tk.block_size = 2;
    tk.k = 3;
    tk.scoring = Scoring::Moba;
    Array keys({10, 1}, 1.0);  // all scores equal
    const BlockStats st = block_key_stats(keys, 2);
    const std::vector<double> q = {1.0};
    const auto sel = select_topk_blocks(9, q, st, tk);
    CHECK((sel == std::vector<std::int64_t>{0, 1, 4}));
}

TEST_CASE("selecting at least every block reproduces the dense set") {
    TopkSpec tk;
    tk.block_size = 4;
    tk.k = 100;
    tk.scoring = Scoring::Quest;
    SparsePatternSpec spec;
    spec.topk = tk;
    Rng rng(34);
    Array keys({30, 2});
    for (auto& v : keys.flat()) v = rng.normal();
    const BlockStats st = block_key_stats(keys, 4);
    const std::vector<double> q = {0.3, -0.7};
    const std::int64_t t = 29;
    const auto sel = select_topk_blocks(t, q, st, *spec.topk);
    const AttendedSet s = topk_indices(t, spec, sel);
    REQUIRE(s.size() == 30);
    for (std::int64_t p = 0; p <= t; ++p) CHECK(s[static_cast<std::size_t>(p)].pos == p);
}

TEST_CASE("combined pattern unions summaries with retrieved blocks") {
    SparsePatternSpec spec;
    spec.dilation = 4;
    spec.combine = true;
    TopkSpec tk;
    tk.block_size = 4;
    tk.k = 2;
    spec.topk = tk;
    const std::vector<std::int64_t> selected = {0, 3};
    const AttendedSet s = topk_indices(13, spec, selected);
    // Block 0 full-res, summaries 7 and 11, block 3 prefix {12}, self 13.
    const std::vector<std::int64_t> want_pos = {0, 1, 2, 3, 7, 11, 12, 13};
    CHECK((positions_of(s) == want_pos));
    CHECK(s[0].label == EntryLabel::TopkBlock);
    CHECK(s[3].label == EntryLabel::TopkBlock);  // retrieval outranks summary at 3
    CHECK(s[4].label == EntryLabel::BlockSummary);
    CHECK(s[5].label == EntryLabel::BlockSummary);
    CHECK(s[6].label == EntryLabel::TopkBlock);
    CHECK(s[7].label == EntryLabel::Self);
}

TEST_CASE("spec validation rejects bad values") {
    SparsePatternSpec spec;
    spec.dilation = 0;
    CHECK_THROWS(spec.validate());
    spec = SparsePatternSpec{};
    spec.window = -1;
    CHECK_THROWS(spec.validate());
    spec = SparsePatternSpec{};
    spec.combine = true;  // combine without topk
    CHECK_THROWS(spec.validate());
    spec = SparsePatternSpec{};
    spec.recurrence_window = 0;
    CHECK_THROWS(spec.validate());
}

TEST_CASE("spec serialization round-trips and rejects unknown fields") {
    SparsePatternSpec spec;
    spec.dilation = 16;
    spec.window = 64;
    spec.sinks = 4;
    spec.recurrence_window = 64;
    spec.active_length = 8;
    TopkSpec tk;
    tk.block_size = 32;
    tk.k = 5;
    tk.scoring = Scoring::Moba;
    spec.topk = tk;
    spec.combine = true;

    const std::string text = spec.to_json();
    const SparsePatternSpec back = SparsePatternSpec::from_json(text);
    CHECK((back == spec));

    // Full-sequence recurrence serializes as the string FULL.
    SparsePatternSpec full;
    CHECK(full.to_json().find("\"FULL\"") != std::string::npos);
    CHECK((SparsePatternSpec::from_json(full.to_json()) == full));

    CHECK_THROWS(SparsePatternSpec::from_json(R"({"dilation": 2, "windw": 3})"));
    CHECK_THROWS(SparsePatternSpec::from_json(R"({"topk": {"block_size": 4, "kk": 2}})"));
    // Scoring names accept either case.
    const SparsePatternSpec lc = SparsePatternSpec::from_json(
        R"({"topk": {"block_size": 4, "k": 2, "scoring": "quest"}})");
    CHECK(lc.topk->scoring == Scoring::Quest);
}

TEST_CASE("pattern labels render compactly") {
    SparsePatternSpec spec;
    CHECK(spec.label() == "d1");
    spec.dilation = 16;
    spec.window = 64;
    spec.sinks = 4;
    CHECK(spec.label() == "d16w64s4");
    spec.window = 0;
    spec.sinks = 0;
    spec.recurrence_window = 8;
    CHECK(spec.label() == "d16l8");
}

TEST_CASE("assignment resolves per-head, per-layer, then default") {
    PatternAssignment a;
    a.fallback = SparsePatternSpec::dilated(2, 0, 0);
    a.per_layer[1] = SparsePatternSpec::dilated(4, 0, 0);
    a.per_head[{1, 0}] = SparsePatternSpec::dilated(8, 0, 0);
    CHECK(a.resolve(0, 0).dilation == 2);
    CHECK(a.resolve(1, 1).dilation == 4);
    CHECK(a.resolve(1, 0).dilation == 8);

    const PatternAssignment back = PatternAssignment::from_json(a.to_json());
    CHECK(back.resolve(0, 0).dilation == 2);
    CHECK(back.resolve(1, 1).dilation == 4);
    CHECK(back.resolve(1, 0).dilation == 8);
}

TEST_SUITE_END();
