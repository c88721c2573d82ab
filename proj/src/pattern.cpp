#include "rmx/pattern.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace rmx {

namespace {

int precedence(EntryLabel label) {
    switch (label) {
        case EntryLabel::Self: return 4;
        case EntryLabel::Local: return 3;
        case EntryLabel::TopkBlock: return 2;
        case EntryLabel::BlockSummary: return 1;
        case EntryLabel::Sink: return 0;
    }
    return -1;
}

void place(std::map<std::int64_t, EntryLabel>& slots, std::int64_t pos, EntryLabel label) {
    auto [it, inserted] = slots.emplace(pos, label);
    if (!inserted && precedence(label) > precedence(it->second)) it->second = label;
}

AttendedSet finish(const std::map<std::int64_t, EntryLabel>& slots) {
    AttendedSet out;
    out.reserve(slots.size());
    for (const auto& [pos, label] : slots) out.push_back({pos, label});
    return out;
}

void place_sinks(std::map<std::int64_t, EntryLabel>& slots, std::int64_t t,
                 const SparsePatternSpec& spec) {
    for (std::int64_t p = 0; p < std::min(spec.sinks, t + 1); ++p) {
        place(slots, p, EntryLabel::Sink);
    }
}

void place_local(std::map<std::int64_t, EntryLabel>& slots, std::int64_t t,
                 const SparsePatternSpec& spec) {
    for (std::int64_t p = std::max<std::int64_t>(0, t - spec.window); p < t; ++p) {
        place(slots, p, EntryLabel::Local);
    }
}

void place_summaries(std::map<std::int64_t, EntryLabel>& slots, std::int64_t t,
                     const SparsePatternSpec& spec) {
    const std::int64_t bs = block_start(t, spec.dilation);
    for (std::int64_t p = spec.dilation - 1; p < bs; p += spec.dilation) {
        place(slots, p, EntryLabel::BlockSummary);
    }
}

}  // namespace

const char* entry_label_name(EntryLabel label) {
    switch (label) {
        case EntryLabel::Sink: return "SINK";
        case EntryLabel::BlockSummary: return "BLOCK_SUMMARY";
        case EntryLabel::Local: return "LOCAL";
        case EntryLabel::Self: return "SELF";
        case EntryLabel::TopkBlock: return "TOPK_BLOCK";
    }
    return "?";
}

void SparsePatternSpec::validate() const {
    if (dilation < 1) throw std::runtime_error("pattern: dilation must be >= 1");
    if (window < 0) throw std::runtime_error("pattern: window must be >= 0");
    if (sinks < 0) throw std::runtime_error("pattern: sinks must be >= 0");
    if (active_length < 1) throw std::runtime_error("pattern: active_length must be >= 1");
    if (recurrence_window && *recurrence_window < 1) {
        throw std::runtime_error("pattern: recurrence_window must be >= 1 or FULL");
    }
    if (topk) {
        if (topk->block_size < 1) throw std::runtime_error("pattern: topk.block_size must be >= 1");
        if (topk->k < 2) throw std::runtime_error("pattern: topk.k must be >= 2");
    }
    if (combine && !topk) throw std::runtime_error("pattern: combine requires topk");
}

SparsePatternSpec SparsePatternSpec::dilated(std::int64_t d, std::int64_t w, std::int64_t s) {
    SparsePatternSpec spec;
    spec.dilation = d;
    spec.window = w;
    spec.sinks = s;
    return spec;
}

std::string SparsePatternSpec::label() const {
    std::string out = "d" + std::to_string(dilation);
    if (window > 0) out += "w" + std::to_string(window);
    if (sinks > 0) out += "s" + std::to_string(sinks);
    if (recurrence_window) out += "l" + std::to_string(*recurrence_window);
    if (topk) {
        out += (topk->scoring == Scoring::Quest ? "q" : "m");
        out += std::to_string(topk->k) + "x" + std::to_string(topk->block_size);
    }
    if (combine) out += "c";
    return out;
}

AttendedSet dilated_indices(std::int64_t t, const SparsePatternSpec& spec) {
    if (t < 0) throw std::runtime_error("dilated_indices: t must be >= 0");
    spec.validate();
    std::map<std::int64_t, EntryLabel> slots;
    place_sinks(slots, t, spec);
    place_summaries(slots, t, spec);
    place_local(slots, t, spec);
    place(slots, t, EntryLabel::Self);
    return finish(slots);
}

std::int64_t expected_cache_entries(std::int64_t t, const SparsePatternSpec& spec) {
    if (t < 0) throw std::runtime_error("expected_cache_entries: t must be >= 0");
    spec.validate();
    // Top-k retrieval needs every past position available, so the store is dense.
    if (topk_dense_store(spec)) return t + 2;
    std::set<std::int64_t> stored;
    for (std::int64_t p = 0; p < std::min(spec.sinks, t + 1); ++p) stored.insert(p);
    for (std::int64_t p = spec.dilation - 1; p <= t; p += spec.dilation) stored.insert(p);
    for (std::int64_t p = std::max<std::int64_t>(0, t - spec.window + 1); p <= t; ++p) {
        if (spec.window > 0) stored.insert(p);
    }
    return static_cast<std::int64_t>(stored.size()) + 1;  // +1 recurrence state slot
}

double quest_block_score(std::span<const double> q, std::span<const double> bmin,
                         std::span<const double> bmax) {
    if (q.size() != bmin.size() || q.size() != bmax.size()) {
        throw std::runtime_error("quest_block_score: mismatched sizes");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        s += std::max(q[i] * bmin[i], q[i] * bmax[i]);
    }
    return s;
}

double moba_block_score(std::span<const double> q, std::span<const double> bmean) {
    if (q.size() != bmean.size()) throw std::runtime_error("moba_block_score: mismatched sizes");
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * bmean[i];
    return s;
}

BlockStats block_key_stats(const Array& keys, std::int64_t block_size) {
    if (keys.rank() != 2 || keys.dim(0) == 0) {
        throw std::runtime_error("block_key_stats: keys must be non-empty [T x head_dim]");
    }
    if (block_size < 1) throw std::runtime_error("block_key_stats: block_size must be >= 1");
    const std::int64_t T = static_cast<std::int64_t>(keys.dim(0));
    const std::size_t d = keys.dim(1);
    const std::int64_t nb = (T + block_size - 1) / block_size;
    BlockStats st;
    st.min = Array({static_cast<std::size_t>(nb), d});
    st.max = Array({static_cast<std::size_t>(nb), d});
    st.mean = Array({static_cast<std::size_t>(nb), d});
    for (std::int64_t b = 0; b < nb; ++b) {
        const std::int64_t lo = b * block_size;
        const std::int64_t hi = std::min(T, lo + block_size);
        for (std::size_t j = 0; j < d; ++j) {
            double mn = keys(static_cast<std::size_t>(lo), j);
            double mx = mn;
            double sum = 0.0;
            for (std::int64_t p = lo; p < hi; ++p) {
                const double v = keys(static_cast<std::size_t>(p), j);
                mn = std::min(mn, v);
                mx = std::max(mx, v);
                sum += v;
            }
            st.min(static_cast<std::size_t>(b), j) = mn;
            st.max(static_cast<std::size_t>(b), j) = mx;
            st.mean(static_cast<std::size_t>(b), j) = sum / static_cast<double>(hi - lo);
        }
    }
    return st;
}

std::vector<std::int64_t> select_topk_blocks(std::int64_t t, std::span<const double> q,
                                             const BlockStats& stats, const TopkSpec& topk) {
    if (t < 0) throw std::runtime_error("select_topk_blocks: t must be >= 0");
    // Only completed blocks (strictly before the query's block) are scored, so
    // stats need rows up to bt-1 only.
    const std::int64_t bt = t / topk.block_size;
    if (stats.n_blocks() < bt) {
        throw std::runtime_error("select_topk_blocks: stats do not cover the scored blocks");
    }
    const std::int64_t total = std::min<std::int64_t>(topk.k, bt + 1);
    std::set<std::int64_t> chosen;
    chosen.insert(0);
    chosen.insert(bt);
    if (static_cast<std::int64_t>(chosen.size()) < total) {
        std::vector<std::pair<double, std::int64_t>> ranked;
        for (std::int64_t b = 1; b < bt; ++b) {
            const double score = topk.scoring == Scoring::Quest
                                     ? quest_block_score(q, stats.min.row(b), stats.max.row(b))
                                     : moba_block_score(q, stats.mean.row(b));
            ranked.emplace_back(score, b);
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (const auto& [score, b] : ranked) {
            if (static_cast<std::int64_t>(chosen.size()) >= total) break;
            chosen.insert(b);
        }
    }
    return {chosen.begin(), chosen.end()};
}

AttendedSet topk_indices(std::int64_t t, const SparsePatternSpec& spec,
                         std::span<const std::int64_t> selected_blocks) {
    if (t < 0) throw std::runtime_error("topk_indices: t must be >= 0");
    spec.validate();
    if (!spec.topk) throw std::runtime_error("topk_indices: spec has no topk");
    std::map<std::int64_t, EntryLabel> slots;
    place_sinks(slots, t, spec);
    if (spec.combine) place_summaries(slots, t, spec);
    const std::int64_t bs = spec.topk->block_size;
    for (std::int64_t b : selected_blocks) {
        const std::int64_t lo = b * bs;
        const std::int64_t hi = std::min(t, lo + bs - 1);
        for (std::int64_t p = lo; p <= hi; ++p) place(slots, p, EntryLabel::TopkBlock);
    }
    place_local(slots, t, spec);
    place(slots, t, EntryLabel::Self);
    return finish(slots);
}

AttendedSet attended_for_query(std::int64_t t, const SparsePatternSpec& spec,
                               std::span<const double> q, const BlockStats* stats) {
    if (!spec.topk) return dilated_indices(t, spec);
    if (q.empty() || stats == nullptr) {
        throw std::runtime_error("attended_for_query: topk needs the query and block stats");
    }
    const auto selected = select_topk_blocks(t, q, *stats, *spec.topk);
    return topk_indices(t, spec, selected);
}

const SparsePatternSpec& PatternAssignment::resolve(std::int64_t layer, std::int64_t head) const {
    if (auto it = per_head.find({layer, head}); it != per_head.end()) return it->second;
    if (auto it = per_layer.find(layer); it != per_layer.end()) return it->second;
    return fallback;
}

// --- serialization ---

namespace {

using nlohmann::json;

std::string scoring_name(Scoring s) { return s == Scoring::Quest ? "QUEST" : "MOBA"; }

Scoring scoring_from(const std::string& s) {
    std::string u;
    for (char c : s) u += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (u == "QUEST") return Scoring::Quest;
    if (u == "MOBA") return Scoring::Moba;
    throw std::runtime_error("pattern: unknown topk.scoring '" + s + "'");
}

json spec_to_json(const SparsePatternSpec& spec) {
    json j;
    j["dilation"] = spec.dilation;
    j["window"] = spec.window;
    j["sinks"] = spec.sinks;
    if (spec.recurrence_window) {
        j["recurrence_window"] = *spec.recurrence_window;
    } else {
        j["recurrence_window"] = "FULL";
    }
    j["active_length"] = spec.active_length;
    if (spec.topk) {
        j["topk"] = {{"block_size", spec.topk->block_size},
                     {"k", spec.topk->k},
                     {"scoring", scoring_name(spec.topk->scoring)}};
    } else {
        j["topk"] = nullptr;
    }
    j["combine"] = spec.combine;
    return j;
}

SparsePatternSpec spec_from_json(const json& j) {
    static const std::set<std::string> known = {"dilation",          "window", "sinks",
                                                "recurrence_window", "active_length",
                                                "topk",              "combine"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw std::runtime_error("pattern: unknown field '" + key + "'");
    }
    SparsePatternSpec spec;
    if (j.contains("dilation")) spec.dilation = j["dilation"].get<std::int64_t>();
    if (j.contains("window")) spec.window = j["window"].get<std::int64_t>();
    if (j.contains("sinks")) spec.sinks = j["sinks"].get<std::int64_t>();
    if (j.contains("recurrence_window") && !j["recurrence_window"].is_null()) {
        const auto& rw = j["recurrence_window"];
        if (rw.is_string()) {
            if (rw.get<std::string>() != "FULL") {
                throw std::runtime_error("pattern: recurrence_window must be an int or \"FULL\"");
            }
        } else {
            spec.recurrence_window = rw.get<std::int64_t>();
        }
    }
    if (j.contains("active_length")) spec.active_length = j["active_length"].get<std::int64_t>();
    if (j.contains("topk") && !j["topk"].is_null()) {
        static const std::set<std::string> tk_known = {"block_size", "k", "scoring"};
        for (const auto& [key, value] : j["topk"].items()) {
            if (!tk_known.count(key)) {
                throw std::runtime_error("pattern: unknown field 'topk." + key + "'");
            }
        }
        TopkSpec tk;
        if (j["topk"].contains("block_size")) tk.block_size = j["topk"]["block_size"].get<std::int64_t>();
        if (j["topk"].contains("k")) tk.k = j["topk"]["k"].get<std::int64_t>();
        if (j["topk"].contains("scoring")) tk.scoring = scoring_from(j["topk"]["scoring"].get<std::string>());
        spec.topk = tk;
    }
    if (j.contains("combine")) spec.combine = j["combine"].get<bool>();
    spec.validate();
    return spec;
}

}  // namespace

std::string SparsePatternSpec::to_json() const { return spec_to_json(*this).dump(2); }

SparsePatternSpec SparsePatternSpec::from_json(const std::string& text) {
    return spec_from_json(json::parse(text));
}

std::string PatternAssignment::to_json() const {
    json j;
    j["default"] = spec_to_json(fallback);
    if (!per_layer.empty()) {
        json jl = json::object();
        for (const auto& [layer, spec] : per_layer) jl[std::to_string(layer)] = spec_to_json(spec);
        j["per_layer"] = jl;
    }
    if (!per_head.empty()) {
        json jh = json::object();
        for (const auto& [key, spec] : per_head) {
            jh[std::to_string(key.first) + ":" + std::to_string(key.second)] = spec_to_json(spec);
        }
        j["per_head"] = jh;
    }
    return j.dump(2);
}

PatternAssignment PatternAssignment::from_json(const std::string& text) {
    const json j = json::parse(text);
    static const std::set<std::string> known = {"default", "per_layer", "per_head"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw std::runtime_error("pattern assignment: unknown field '" + key + "'");
    }
    PatternAssignment a;
    if (j.contains("default")) a.fallback = spec_from_json(j["default"]);
    if (j.contains("per_layer")) {
        for (const auto& [key, value] : j["per_layer"].items()) {
            a.per_layer[std::stoll(key)] = spec_from_json(value);
        }
    }
    if (j.contains("per_head")) {
        for (const auto& [key, value] : j["per_head"].items()) {
            const auto colon = key.find(':');
            if (colon == std::string::npos) {
                throw std::runtime_error("pattern assignment: per_head keys are 'layer:head'");
            }
            const std::int64_t layer = std::stoll(key.substr(0, colon));
            const std::int64_t head = std::stoll(key.substr(colon + 1));
            a.per_head[{layer, head}] = spec_from_json(value);
        }
    }
    return a;
}

}  // namespace rmx
