#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmx/pattern.hpp"

namespace rmx {

// Analytic per-token decode cost of the mixing operator, in flops counted as
// two per multiply-add.
//
//   attention:  |attended set| * heads * 4 * head_dim
//   recurrence: 8 * heads * head_dim  (gated key and value updates)
//   scoring:    top-k block ranking; 4*head_dim per scored block for QUEST
//               bounds, 2*head_dim for MOBA means, times heads
//
// Projection flops are pattern-independent and deliberately excluded so the
// breakdown isolates what the sparse pattern changes.
struct FlopsBreakdown {
    double attention = 0.0;
    double recurrence = 0.0;
    double scoring = 0.0;
    double total = 0.0;
};

// Number of attended positions at decode position t, using the representative
// block selection {first blocks..., current block}. For top-k specs without
// combine or a local window the count is exact regardless of which middle
// blocks the live scores pick (sinks sit inside the always-selected first
// block); with combine or a window the overlap depends on the selection and
// the count is representative rather than exact.
std::int64_t attended_count(const SparsePatternSpec& spec, std::int64_t t);

FlopsBreakdown flops_per_token(const SparsePatternSpec& spec, std::int64_t t,
                               std::int64_t heads, std::int64_t head_dim);

// Wall-clock decode measurement: prefill T random tokens through one mixing
// layer, then time single-token decode steps at positions T..T+repeats-1.
struct BenchStats {
    double decode_ns_median = 0.0;  // per decode step
    double decode_ns_mean = 0.0;
    double prefill_ms = 0.0;  // whole prefill
    std::int64_t entries = 0;  // cache entries after the timed steps
};

BenchStats bench_operator(const SparsePatternSpec& spec, std::int64_t T, std::int64_t heads,
                          std::int64_t head_dim, std::int64_t model_dim, std::int64_t repeats,
                          std::uint64_t seed);

struct CostRow {
    std::string pattern;
    std::int64_t T = 0;
    double flops_per_token = 0.0;
    std::int64_t cache_entries = 0;
    double measured_ns = 0.0;  // negative when not measured
};

struct CostReport {
    std::vector<CostRow> rows;

    // Column order is part of the format: pattern,T,flops_per_token,
    // cache_entries,measured_ns. Unmeasured rows leave measured_ns empty.
    std::string to_csv() const;
    std::string to_markdown() const;
};

}  // namespace rmx
