#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmx/array.hpp"

namespace rmx {

enum class Scoring { Quest, Moba };

// Top-k block retrieval settings. Selected blocks are attended at full
// resolution; the first and the query's own block are always selected.
struct TopkSpec {
    std::int64_t block_size = 16;
    std::int64_t k = 4;
    Scoring scoring = Scoring::Quest;
    bool operator==(const TopkSpec&) const = default;
};

// Which past positions a query may attend, and how the recurrence runs.
//   dilation:          block size D; queries see one summary per earlier block.
//   window:            local window W of immediately preceding positions.
//   sinks:             first S absolute positions always kept and attended.
//   recurrence_window: gated-scan span L; nullopt means the full sequence.
//   active_length:     L*, positions a summary effectively aggregates when
//                      trained; bookkeeping for corpus/eval design.
//   topk / combine:    block retrieval, alone or unioned with the dilated set.
struct SparsePatternSpec {
    std::int64_t dilation = 1;
    std::int64_t window = 0;
    std::int64_t sinks = 0;
    std::optional<std::int64_t> recurrence_window;  // nullopt = full sequence
    std::int64_t active_length = 1;
    std::optional<TopkSpec> topk;
    bool combine = false;

    void validate() const;

    static SparsePatternSpec dense() { return SparsePatternSpec{}; }
    static SparsePatternSpec dilated(std::int64_t d, std::int64_t w = 0, std::int64_t s = 4);

    // Compact label used in report tables, e.g. "d16w64s4".
    std::string label() const;

    std::string to_json() const;
    static SparsePatternSpec from_json(const std::string& text);

    bool operator==(const SparsePatternSpec&) const = default;
};

enum class EntryLabel { Sink, BlockSummary, Local, Self, TopkBlock };

struct AttendedEntry {
    std::int64_t pos;
    EntryLabel label;
    bool operator==(const AttendedEntry&) const = default;
};

// Positions a query at t attends, ascending, deduplicated. When one position
// qualifies under several labels the strongest wins:
// SELF > LOCAL > TOPK_BLOCK > BLOCK_SUMMARY > SINK.
using AttendedSet = std::vector<AttendedEntry>;

const char* entry_label_name(EntryLabel label);

// First position of the dilation block containing t.
inline std::int64_t block_start(std::int64_t t, std::int64_t dilation) {
    return t - t % dilation;
}

// Attended set of the dilated pattern (no top-k): sinks, one summary per
// completed earlier block, the local window, and the query itself.
AttendedSet dilated_indices(std::int64_t t, const SparsePatternSpec& spec);

// Live cache slots right after absorbing token t: distinct stored positions
// plus one slot for the recurrence state.
std::int64_t expected_cache_entries(std::int64_t t, const SparsePatternSpec& spec);

// True when the pattern needs every past position kept (top-k retrieval may
// pick any block later, so nothing can be dropped).
inline bool topk_dense_store(const SparsePatternSpec& spec) { return spec.topk.has_value(); }

// Upper bound on max_{k in block} q.k from elementwise block min/max.
double quest_block_score(std::span<const double> q, std::span<const double> bmin,
                         std::span<const double> bmax);

// Mean-pooled block relevance: q . mean(block keys).
double moba_block_score(std::span<const double> q, std::span<const double> bmean);

// Elementwise min/max/mean of key rows grouped into blocks of block_size.
// keys is [T x head_dim]; the last block may be partial.
struct BlockStats {
    Array min;   // [n_blocks x head_dim]
    Array max;   // [n_blocks x head_dim]
    Array mean;  // [n_blocks x head_dim]
    std::int64_t n_blocks() const { return static_cast<std::int64_t>(min.dim(0)); }
};

BlockStats block_key_stats(const Array& keys, std::int64_t block_size);

// Indices of the blocks a query at t retrieves, ascending. Block 0 and the
// block containing t are always retrieved; the rest are ranked by score with
// ties broken toward the lower block index.
std::vector<std::int64_t> select_topk_blocks(std::int64_t t, std::span<const double> q,
                                             const BlockStats& stats, const TopkSpec& topk);

// Attended set when top-k retrieval is on. Selected blocks contribute every
// position; with combine=true the dilated block summaries are unioned in.
AttendedSet topk_indices(std::int64_t t, const SparsePatternSpec& spec,
                         std::span<const std::int64_t> selected_blocks);

// Unified entry point: dilated_indices for plain specs, top-k selection plus
// topk_indices otherwise (q/stats required then).
AttendedSet attended_for_query(std::int64_t t, const SparsePatternSpec& spec,
                               std::span<const double> q = {},
                               const BlockStats* stats = nullptr);

// Per-layer / per-head pattern resolution for hybrid models.
struct PatternAssignment {
    SparsePatternSpec fallback;
    std::map<std::int64_t, SparsePatternSpec> per_layer;
    std::map<std::pair<std::int64_t, std::int64_t>, SparsePatternSpec> per_head;

    const SparsePatternSpec& resolve(std::int64_t layer, std::int64_t head) const;

    static PatternAssignment uniform(SparsePatternSpec spec) {
        PatternAssignment a;
        a.fallback = std::move(spec);
        return a;
    }

    std::string to_json() const;
    static PatternAssignment from_json(const std::string& text);
};

}  // namespace rmx
