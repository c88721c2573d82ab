#include "rmx/kv_cache.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "rmx/container_io.hpp"

namespace rmx {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// out[j] = sum_i x[i] * w(i, j) for a single row; w is [in x out].
std::vector<double> row_matvec(std::span<const double> x, const Array& w) {
    const std::size_t in = w.dim(0), out_dim = w.dim(1);
    if (x.size() != in) throw std::runtime_error("row_matvec: size mismatch");
    std::vector<double> out(out_dim, 0.0);
    const double* wp = w.data();
    for (std::size_t i = 0; i < in; ++i) {
        const double xv = x[i];
        const double* wrow = wp + i * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) out[j] += xv * wrow[j];
    }
    return out;
}

}  // namespace

DilatedKVCache::DilatedKVCache(SparsePatternSpec spec, RopeParams rope, std::int64_t heads,
                               std::int64_t head_dim)
    : spec_(std::move(spec)), rope_(rope), heads_(heads), head_dim_(head_dim) {
    spec_.validate();
    const std::size_t gd = static_cast<std::size_t>(heads_ * head_dim_);
    StatePair sp;
    sp.k = scan::RecurrenceState::zeros(gd);
    sp.v = scan::RecurrenceState::zeros(gd);
    sp.start = 0;
    states_.push_back(std::move(sp));
    if (spec_.topk) stats_.assign(static_cast<std::size_t>(heads_), {});
}

std::int64_t DilatedKVCache::entry_count() const {
    return static_cast<std::int64_t>(store_.size() + states_.size());
}

CacheFootprint DilatedKVCache::footprint() const {
    const std::int64_t gd = heads_ * head_dim_;
    CacheFootprint fp;
    fp.entries = entry_count();
    fp.bytes = static_cast<std::int64_t>(store_.size()) * (8 + 8 * gd) +
               static_cast<std::int64_t>(states_.size()) * 8 * gd;
    if (spec_.topk && !stats_.empty()) {
        const std::int64_t nb = static_cast<std::int64_t>(stats_[0].size());
        fp.bytes += heads_ * nb * 3 * head_dim_ * 4;
    }
    return fp;
}

void DilatedKVCache::absorb_entry(std::int64_t pos, std::vector<double> k_rope_row,
                                  std::vector<double> v_row) {
    Entry e;
    e.k = std::move(k_rope_row);
    e.v = std::move(v_row);
    e.sink = pos < spec_.sinks;
    e.summary = pos % spec_.dilation == spec_.dilation - 1;
    e.ring = spec_.window > 0;
    e.full = topk_dense_store(spec_);
    if (!e.live()) return;
    store_.emplace(pos, std::move(e));
    if (spec_.window > 0) {
        ring_.push_back(pos);
        if (static_cast<std::int64_t>(ring_.size()) > spec_.window) {
            const std::int64_t old = ring_.front();
            ring_.pop_front();
            auto it = store_.find(old);
            it->second.ring = false;
            if (!it->second.live()) store_.erase(it);
        }
    }
}

void DilatedKVCache::update_stats(std::int64_t pos, std::span<const double> k_rope_row) {
    if (!spec_.topk) return;
    const std::int64_t b = pos / spec_.topk->block_size;
    const std::size_t hd = static_cast<std::size_t>(head_dim_);
    for (std::size_t h = 0; h < static_cast<std::size_t>(heads_); ++h) {
        auto& blocks = stats_[h];
        if (static_cast<std::int64_t>(blocks.size()) <= b) {
            BlockAccum acc;
            acc.min.assign(hd, std::numeric_limits<double>::infinity());
            acc.max.assign(hd, -std::numeric_limits<double>::infinity());
            acc.sum.assign(hd, 0.0);
            blocks.push_back(std::move(acc));
        }
        BlockAccum& acc = blocks[static_cast<std::size_t>(b)];
        const double* kr = k_rope_row.data() + h * hd;
        for (std::size_t j = 0; j < hd; ++j) {
            acc.min[j] = std::min(acc.min[j], kr[j]);
            acc.max[j] = std::max(acc.max[j], kr[j]);
            acc.sum[j] += kr[j];
        }
        acc.count += 1;
    }
}

BlockStats DilatedKVCache::stats_for_head(std::size_t h) const {
    const std::size_t hd = static_cast<std::size_t>(head_dim_);
    const auto& blocks = stats_[h];
    BlockStats st;
    st.min = Array({blocks.size(), hd});
    st.max = Array({blocks.size(), hd});
    st.mean = Array({blocks.size(), hd});
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t j = 0; j < hd; ++j) {
            st.min(b, j) = blocks[b].min[j];
            st.max(b, j) = blocks[b].max[j];
            st.mean(b, j) = blocks[b].sum[j] / static_cast<double>(blocks[b].count);
        }
    }
    return st;
}

std::vector<double> DilatedKVCache::step(std::span<const double> x_row,
                                         const MixParams& params) {
    const std::size_t gd = static_cast<std::size_t>(heads_ * head_dim_);
    const std::size_t hd = static_cast<std::size_t>(head_dim_);
    const std::size_t H = static_cast<std::size_t>(heads_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::int64_t t = ++last_pos_;

    std::vector<double> q = row_matvec(x_row, params.wq);
    std::vector<double> k = row_matvec(x_row, params.wk);
    std::vector<double> v = row_matvec(x_row, params.wv);
    std::vector<double> g = row_matvec(x_row, params.gate.w);
    for (double& z : g) z = sigmoid(z);

    // Finite recurrence windows restart a state every L tokens and keep the
    // two most recent; the older one covers at least the last L positions.
    if (spec_.recurrence_window && t > 0 && t % *spec_.recurrence_window == 0) {
        if (states_.size() == 2) states_.erase(states_.begin());
        StatePair fresh;
        fresh.k = scan::RecurrenceState::zeros(gd);
        fresh.v = scan::RecurrenceState::zeros(gd);
        fresh.start = t;
        states_.push_back(std::move(fresh));
    }
    for (StatePair& sp : states_) {
        scan::state_step(sp.k, k, g);
        scan::state_step(sp.v, v, g);
    }

    std::vector<double> k_self(states_[0].k.h.flat().begin(), states_[0].k.h.flat().end());
    std::vector<double> v_self(states_[0].v.h.flat().begin(), states_[0].v.h.flat().end());
    std::vector<double> k_self_rope = k_self;
    std::vector<double> q_rope = q;
    if (rope_.enabled) {
        for (std::size_t h = 0; h < H; ++h) {
            rope_apply_row(std::span<double>(k_self_rope).subspan(h * hd, hd), t, rope_);
            rope_apply_row(std::span<double>(q_rope).subspan(h * hd, hd), t, rope_);
        }
    }

    std::vector<double> attn(gd, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        auto qh = std::span<const double>(q_rope).subspan(h * hd, hd);
        AttendedSet attended;
        if (spec_.topk) {
            const BlockStats st = stats_for_head(h);
            const auto selected = select_topk_blocks(t, qh, st, *spec_.topk);
            attended = topk_indices(t, spec_, selected);
        } else {
            attended = dilated_indices(t, spec_);
        }
        // One segment per label, in merge order, mirroring the prefill path.
        static constexpr EntryLabel order[] = {EntryLabel::Sink, EntryLabel::BlockSummary,
                                               EntryLabel::TopkBlock, EntryLabel::Local,
                                               EntryLabel::Self};
        std::vector<AttnSegment> segments;
        for (EntryLabel label : order) {
            AttnSegment seg;
            for (const AttendedEntry& e : attended) {
                if (e.label != label) continue;
                if (e.pos == t) {
                    seg.keys.push_back(k_self_rope.data() + h * hd);
                    seg.values.push_back(v_self.data() + h * hd);
                } else {
                    auto it = store_.find(e.pos);
                    if (it == store_.end()) {
                        throw std::runtime_error("kv cache: attended position not stored");
                    }
                    seg.keys.push_back(it->second.k.data() + h * hd);
                    seg.values.push_back(it->second.v.data() + h * hd);
                }
            }
            if (!seg.keys.empty()) segments.push_back(std::move(seg));
        }
        attend_online_ptrs(qh, segments, scale,
                           std::span<double>(attn).subspan(h * hd, hd));
    }

    std::vector<double> og = row_matvec(x_row, params.ogate.w);
    for (std::size_t i = 0; i < gd; ++i) og[i] = sigmoid(og[i]) * attn[i];
    std::vector<double> y = row_matvec(og, params.wout);
    ensure_finite(y, "decode_step");

    update_stats(t, k_self_rope);
    absorb_entry(t, std::move(k_self_rope), std::move(v_self));
    return y;
}

std::pair<Array, DilatedKVCache> prefill(const Array& x, const MixParams& params,
                                         const MixConfig& config) {
    for (const SparsePatternSpec& hs : config.head_specs) {
        if (!(hs == config.spec)) {
            throw std::runtime_error("prefill: cache requires a uniform pattern across heads");
        }
    }
    MixRecord record;
    record.tape_attention = false;  // only projection rows are consumed below
    Array y = temporal_mixing_forward(x, params, config, &record);
    const std::int64_t T = static_cast<std::int64_t>(x.dim(0));
    const std::size_t gd = static_cast<std::size_t>(params.heads * params.head_dim);

    DilatedKVCache cache(config.spec, config.rope, params.heads, params.head_dim);
    cache.last_pos_ = T - 1;

    // Recurrence states replayed sequentially over the recorded projections.
    auto replay = [&](std::int64_t start) {
        DilatedKVCache::StatePair sp;
        sp.k = scan::RecurrenceState::zeros(gd);
        sp.v = scan::RecurrenceState::zeros(gd);
        sp.start = start;
        for (std::int64_t u = start; u < T; ++u) {
            scan::state_step(sp.k, record.k.row(static_cast<std::size_t>(u)),
                             record.g.row(static_cast<std::size_t>(u)));
            scan::state_step(sp.v, record.v.row(static_cast<std::size_t>(u)),
                             record.g.row(static_cast<std::size_t>(u)));
        }
        return sp;
    };
    cache.states_.clear();
    if (config.spec.recurrence_window && T - 1 >= *config.spec.recurrence_window) {
        const std::int64_t L = *config.spec.recurrence_window;
        const std::int64_t m = (T - 1) / L;
        cache.states_.push_back(replay((m - 1) * L));
        cache.states_.push_back(replay(m * L));
    } else {
        cache.states_.push_back(replay(0));
    }

    for (std::int64_t pos = 0; pos < T; ++pos) {
        const auto kr = record.k_rope.row(static_cast<std::size_t>(pos));
        const auto vr = record.v_tilde.row(static_cast<std::size_t>(pos));
        if (config.spec.topk) cache.update_stats(pos, kr);
        const bool in_ring = config.spec.window > 0 && pos >= T - config.spec.window;
        DilatedKVCache::Entry e;
        e.k.assign(kr.begin(), kr.end());
        e.v.assign(vr.begin(), vr.end());
        e.sink = pos < config.spec.sinks;
        e.summary = pos % config.spec.dilation == config.spec.dilation - 1;
        e.ring = in_ring;
        e.full = topk_dense_store(config.spec);
        if (e.live()) {
            cache.store_.emplace(pos, std::move(e));
            if (in_ring) cache.ring_.push_back(pos);
        }
    }
    return {std::move(y), std::move(cache)};
}

std::vector<double> decode_step(DilatedKVCache& cache, std::span<const double> x_row,
                                const MixParams& params) {
    return cache.step(x_row, params);
}

CacheFootprint cache_footprint(const SparsePatternSpec& spec, std::int64_t t,
                               std::int64_t heads, std::int64_t head_dim) {
    const std::int64_t gd = heads * head_dim;
    CacheFootprint fp;
    const std::int64_t states =
        (spec.recurrence_window && t >= *spec.recurrence_window) ? 2 : 1;
    const std::int64_t stored = expected_cache_entries(t, spec) - 1;
    fp.entries = stored + states;
    fp.bytes = stored * (8 + 8 * gd) + states * 8 * gd;
    if (spec.topk) {
        const std::int64_t nb = t / spec.topk->block_size + 1;
        fp.bytes += heads * nb * 3 * head_dim * 4;
    }
    return fp;
}

// --- snapshot serialization ---

void DilatedKVCache::save(const std::string& path) const {
    using nlohmann::json;
    io::Container c;
    c.magic = "RMXC";
    c.version = 1;

    json meta;
    meta["spec"] = json::parse(spec_.to_json());
    meta["rope"] = {{"enabled", rope_.enabled}, {"base", rope_.base}};
    meta["heads"] = heads_;
    meta["head_dim"] = head_dim_;
    meta["last_pos"] = last_pos_;
    json entries = json::array();
    const std::size_t gd = static_cast<std::size_t>(heads_ * head_dim_);
    Array ek({store_.size(), gd}), ev({store_.size(), gd});
    std::size_t row = 0;
    for (const auto& [pos, e] : store_) {
        entries.push_back({{"pos", pos},
                           {"sink", e.sink},
                           {"summary", e.summary},
                           {"ring", e.ring},
                           {"full", e.full}});
        std::copy(e.k.begin(), e.k.end(), ek.row(row).begin());
        std::copy(e.v.begin(), e.v.end(), ev.row(row).begin());
        ++row;
    }
    meta["entries"] = entries;
    json jstates = json::array();
    for (const auto& sp : states_) {
        jstates.push_back({{"start", sp.start}, {"steps", sp.k.steps}});
    }
    meta["states"] = jstates;
    c.meta_json = meta.dump();

    c.add("entry_k", std::move(ek));
    c.add("entry_v", std::move(ev));
    for (std::size_t i = 0; i < states_.size(); ++i) {
        c.add("state" + std::to_string(i) + "_k", states_[i].k.h);
        c.add("state" + std::to_string(i) + "_v", states_[i].v.h);
    }
    if (spec_.topk) {
        const std::size_t hd = static_cast<std::size_t>(head_dim_);
        const std::size_t nb = stats_.empty() ? 0 : stats_[0].size();
        Array smin({static_cast<std::size_t>(heads_), nb, hd});
        Array smax({static_cast<std::size_t>(heads_), nb, hd});
        Array ssum({static_cast<std::size_t>(heads_), nb, hd});
        Array scount({static_cast<std::size_t>(heads_), nb});
        for (std::size_t h = 0; h < stats_.size(); ++h) {
            for (std::size_t b = 0; b < nb; ++b) {
                for (std::size_t j = 0; j < hd; ++j) {
                    smin(h, b, j) = stats_[h][b].min[j];
                    smax(h, b, j) = stats_[h][b].max[j];
                    ssum(h, b, j) = stats_[h][b].sum[j];
                }
                scount(h, b) = static_cast<double>(stats_[h][b].count);
            }
        }
        c.add("stats_min", std::move(smin));
        c.add("stats_max", std::move(smax));
        c.add("stats_sum", std::move(ssum));
        c.add("stats_count", std::move(scount));
    }
    io::save_container(path, c);
}

DilatedKVCache DilatedKVCache::load(const std::string& path) {
    using nlohmann::json;
    const io::Container c = io::load_container(path, "RMXC");
    if (c.version != 1) throw std::runtime_error("kv cache: unsupported snapshot version");
    const json meta = json::parse(c.meta_json);

    RopeParams rope;
    rope.enabled = meta["rope"]["enabled"].get<bool>();
    rope.base = meta["rope"]["base"].get<double>();
    DilatedKVCache cache(SparsePatternSpec::from_json(meta["spec"].dump()), rope,
                         meta["heads"].get<std::int64_t>(), meta["head_dim"].get<std::int64_t>());
    cache.last_pos_ = meta["last_pos"].get<std::int64_t>();

    const std::size_t gd = static_cast<std::size_t>(cache.heads_ * cache.head_dim_);
    const Array& ek = c.require("entry_k");
    const Array& ev = c.require("entry_v");
    std::size_t row = 0;
    for (const auto& je : meta["entries"]) {
        Entry e;
        e.sink = je["sink"].get<bool>();
        e.summary = je["summary"].get<bool>();
        e.ring = je["ring"].get<bool>();
        e.full = je["full"].get<bool>();
        e.k.assign(ek.row(row).begin(), ek.row(row).end());
        e.v.assign(ev.row(row).begin(), ev.row(row).end());
        const std::int64_t pos = je["pos"].get<std::int64_t>();
        if (e.ring) cache.ring_.push_back(pos);
        cache.store_.emplace(pos, std::move(e));
        ++row;
    }

    cache.states_.clear();
    std::size_t si = 0;
    for (const auto& js : meta["states"]) {
        StatePair sp;
        sp.start = js["start"].get<std::int64_t>();
        sp.k.h = c.require("state" + std::to_string(si) + "_k");
        sp.v.h = c.require("state" + std::to_string(si) + "_v");
        sp.k.steps = js["steps"].get<std::int64_t>();
        sp.v.steps = sp.k.steps;
        if (sp.k.h.size() != gd) throw std::runtime_error("kv cache: state size mismatch");
        cache.states_.push_back(std::move(sp));
        ++si;
    }

    if (cache.spec_.topk) {
        const Array& smin = c.require("stats_min");
        const Array& smax = c.require("stats_max");
        const Array& ssum = c.require("stats_sum");
        const Array& scount = c.require("stats_count");
        const std::size_t nb = smin.dim(1);
        const std::size_t hd = static_cast<std::size_t>(cache.head_dim_);
        cache.stats_.assign(static_cast<std::size_t>(cache.heads_), {});
        for (std::size_t h = 0; h < cache.stats_.size(); ++h) {
            for (std::size_t b = 0; b < nb; ++b) {
                BlockAccum acc;
                acc.min.resize(hd);
                acc.max.resize(hd);
                acc.sum.resize(hd);
                for (std::size_t j = 0; j < hd; ++j) {
                    acc.min[j] = smin(h, b, j);
                    acc.max[j] = smax(h, b, j);
                    acc.sum[j] = ssum(h, b, j);
                }
                acc.count = static_cast<std::int64_t>(scount(h, b));
                cache.stats_[h].push_back(std::move(acc));
            }
        }
    }
    return cache;
}

}  // namespace rmx
