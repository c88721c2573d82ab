#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "rmx/attention.hpp"

namespace rmx {

struct CacheFootprint {
    std::int64_t entries = 0;  // stored positions plus recurrence state slots
    std::int64_t bytes = 0;    // serialized size of the numeric payload
};

// Streaming key/value store for one temporal mixing layer.
//
// Stored per position: the rotated gated key and the gated value, frozen at
// absorb time. A position stays live while it is a sink, a block summary, or
// inside the local ring; with top-k retrieval every position stays live.
// The recurrence state is held unrotated and serves the SELF entry.
//
// Finite recurrence windows keep two states (restarted every L tokens); the
// older one approximates the exact L-token window, so decode after a finite-L
// prefill is approximate by design. Full-window specs decode exactly.
class DilatedKVCache {
public:
    DilatedKVCache() = default;
    DilatedKVCache(SparsePatternSpec spec, RopeParams rope, std::int64_t heads,
                   std::int64_t head_dim);

    const SparsePatternSpec& spec() const { return spec_; }
    std::int64_t last_pos() const { return last_pos_; }

    // Distinct stored positions plus state slots.
    std::int64_t entry_count() const;
    CacheFootprint footprint() const;

    // Absorbs one token's layer input row and returns the mixed output row.
    std::vector<double> step(std::span<const double> x_row, const MixParams& params);

    void save(const std::string& path) const;
    static DilatedKVCache load(const std::string& path);

private:
    friend std::pair<Array, DilatedKVCache> prefill(const Array& x, const MixParams& params,
                                                    const MixConfig& config);

    struct Entry {
        std::vector<double> k, v;  // [heads*head_dim]
        bool sink = false, summary = false, ring = false, full = false;
        bool live() const { return sink || summary || ring || full; }
    };

    struct BlockAccum {
        std::vector<double> min, max, sum;  // [head_dim]
        std::int64_t count = 0;
    };

    void absorb_entry(std::int64_t pos, std::vector<double> k_rope_row,
                      std::vector<double> v_row);
    void update_stats(std::int64_t pos, std::span<const double> k_rope_row);
    BlockStats stats_for_head(std::size_t h) const;

    SparsePatternSpec spec_;
    RopeParams rope_;
    std::int64_t heads_ = 0, head_dim_ = 0;
    std::int64_t last_pos_ = -1;

    std::map<std::int64_t, Entry> store_;
    std::deque<std::int64_t> ring_;

    // states_[0] is the older (served) state; a second appears for finite L.
    struct StatePair {
        scan::RecurrenceState k, v;
        std::int64_t start = 0;
    };
    std::vector<StatePair> states_;

    std::vector<std::vector<BlockAccum>> stats_;  // [heads][block]
};

// Runs the full mixing layer over x and returns its outputs together with a
// cache positioned to continue decoding at position T.
std::pair<Array, DilatedKVCache> prefill(const Array& x, const MixParams& params,
                                         const MixConfig& config);

// One decode step; the cache advances to the next position.
std::vector<double> decode_step(DilatedKVCache& cache, std::span<const double> x_row,
                                const MixParams& params);

// Bytes-and-slots model for a hypothetical cache at position t, matching what
// a live cache reports. One slot is charged per state vector pair.
CacheFootprint cache_footprint(const SparsePatternSpec& spec, std::int64_t t,
                               std::int64_t heads, std::int64_t head_dim);

}  // namespace rmx
