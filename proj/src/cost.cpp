#include "rmx/cost.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "rmx/kv_cache.hpp"
#include "rmx/rng.hpp"

namespace rmx {

std::int64_t attended_count(const SparsePatternSpec& spec, std::int64_t t) {
    spec.validate();
    if (!spec.topk) {
        return static_cast<std::int64_t>(dilated_indices(t, spec).size());
    }
    const std::int64_t B = spec.topk->block_size;
    const std::int64_t bt = t / B;
    const std::int64_t take = std::min<std::int64_t>(spec.topk->k, bt + 1);
    std::vector<std::int64_t> selected;
    for (std::int64_t b = 0; b + 1 < take; ++b) selected.push_back(b);
    if (selected.empty() || selected.back() != bt) selected.push_back(bt);
    return static_cast<std::int64_t>(topk_indices(t, spec, selected).size());
}

FlopsBreakdown flops_per_token(const SparsePatternSpec& spec, std::int64_t t,
                               std::int64_t heads, std::int64_t head_dim) {
    FlopsBreakdown f;
    const double hd = static_cast<double>(head_dim);
    const double H = static_cast<double>(heads);
    f.attention = static_cast<double>(attended_count(spec, t)) * H * 4.0 * hd;
    f.recurrence = 8.0 * H * hd;
    if (spec.topk) {
        const std::int64_t bt = t / spec.topk->block_size;
        const auto scored = static_cast<double>(std::max<std::int64_t>(bt - 1, 0));
        const double per_block = spec.topk->scoring == Scoring::Quest ? 4.0 * hd : 2.0 * hd;
        f.scoring = scored * per_block * H;
    }
    f.total = f.attention + f.recurrence + f.scoring;
    return f;
}

BenchStats bench_operator(const SparsePatternSpec& spec, std::int64_t T, std::int64_t heads,
                          std::int64_t head_dim, std::int64_t model_dim, std::int64_t repeats,
                          std::uint64_t seed) {
    spec.validate();
    if (T < 1 || repeats < 1) throw std::runtime_error("bench: T and repeats must be positive");
    using clock = std::chrono::steady_clock;

    Rng rng(seed);
    const std::size_t dm = static_cast<std::size_t>(model_dim);
    const std::size_t gd = static_cast<std::size_t>(heads * head_dim);
    auto randm = [&rng](std::size_t r, std::size_t c) {
        Array a({r, c});
        for (double& v : a.flat()) v = rng.normal(0.0, 0.05);
        return a;
    };
    MixParams params;
    params.wq = randm(dm, gd);
    params.wk = randm(dm, gd);
    params.wv = randm(dm, gd);
    params.gate.w = randm(dm, gd);
    params.ogate.w = randm(dm, gd);
    params.wout = randm(gd, dm);
    params.heads = heads;
    params.head_dim = head_dim;

    Array x({static_cast<std::size_t>(T), dm});
    for (double& v : x.flat()) v = rng.normal(0.0, 1.0);
    MixConfig config;
    config.spec = spec;

    const auto t0 = clock::now();
    auto [y, cache] = prefill(x, params, config);
    const auto t1 = clock::now();

    BenchStats stats;
    stats.prefill_ms =
        std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(t1 - t0).count();

    std::vector<double> step_ns;
    step_ns.reserve(static_cast<std::size_t>(repeats));
    std::vector<double> row(dm);
    double sink = 0.0;  // keeps the timed work observable
    for (std::int64_t r = 0; r < repeats; ++r) {
        for (double& v : row) v = rng.normal(0.0, 1.0);
        const auto s0 = clock::now();
        const auto out = decode_step(cache, row, params);
        const auto s1 = clock::now();
        sink += out[0];
        step_ns.push_back(
            std::chrono::duration_cast<std::chrono::duration<double, std::nano>>(s1 - s0)
                .count());
    }
    if (!std::isfinite(sink)) throw std::runtime_error("bench: non-finite decode output");

    std::vector<double> sorted = step_ns;
    std::sort(sorted.begin(), sorted.end());
    stats.decode_ns_median = sorted[sorted.size() / 2];
    double sum = 0.0;
    for (double v : step_ns) sum += v;
    stats.decode_ns_mean = sum / static_cast<double>(step_ns.size());
    stats.entries = cache.entry_count();
    return stats;
}

std::string CostReport::to_csv() const {
    std::string out = "pattern,T,flops_per_token,cache_entries,measured_ns\n";
    char line[192];
    for (const CostRow& r : rows) {
        if (r.measured_ns >= 0.0) {
            std::snprintf(line, sizeof(line), "%s,%lld,%.10g,%lld,%.10g\n", r.pattern.c_str(),
                          static_cast<long long>(r.T), r.flops_per_token,
                          static_cast<long long>(r.cache_entries), r.measured_ns);
        } else {
            std::snprintf(line, sizeof(line), "%s,%lld,%.10g,%lld,\n", r.pattern.c_str(),
                          static_cast<long long>(r.T), r.flops_per_token,
                          static_cast<long long>(r.cache_entries));
        }
        out += line;
    }
    return out;
}

std::string CostReport::to_markdown() const {
    std::string out =
        "| pattern | T | flops/token | cache entries | measured ns |\n"
        "|---|---:|---:|---:|---:|\n";
    char line[192];
    for (const CostRow& r : rows) {
        if (r.measured_ns >= 0.0) {
            std::snprintf(line, sizeof(line), "| %s | %lld | %.4g | %lld | %.4g |\n",
                          r.pattern.c_str(), static_cast<long long>(r.T), r.flops_per_token,
                          static_cast<long long>(r.cache_entries), r.measured_ns);
        } else {
            std::snprintf(line, sizeof(line), "| %s | %lld | %.4g | %lld | |\n",
                          r.pattern.c_str(), static_cast<long long>(r.T), r.flops_per_token,
                          static_cast<long long>(r.cache_entries));
        }
        out += line;
    }
    return out;
}

}  // namespace rmx
