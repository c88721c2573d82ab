// Command line front end: training, adaptation, evaluation, benchmarks,
// analytic cost tables, a decode demo, and a built-in equivalence battery.
//
// Exit codes: 0 success, 1 validation or usage error, 2 equivalence-battery
// failure, 3 runtime fault during computation.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rmx/config.hpp"
#include "rmx/corpus.hpp"
#include "rmx/cost.hpp"
#include "rmx/kv_cache.hpp"
#include "rmx/model.hpp"
#include "rmx/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitEquivalence = 2;
constexpr int kExitRuntime = 3;

// Thrown for bad inputs discovered after argument parsing.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

rmx::RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    nlohmann::json j;
    {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open config '" + path + "'");
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("config parse error in '" + path + "': " + e.what());
        }
    }
    try {
        for (const std::string& o : overrides) rmx::apply_override(j, o);
        return rmx::RunConfig::from_json(j);
    } catch (const std::exception& e) {
        throw ValidationError(e.what());
    }
}

void write_manifest(const std::string& dir, const std::string& command, std::uint64_t hash,
                    std::uint64_t seed, const std::vector<std::string>& artifacts) {
    nlohmann::json j;
    j["command"] = command;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
    j["config_hash"] = hex;
    j["seed"] = seed;
    j["artifacts"] = artifacts;
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in '" + dir + "'");
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// equiv: runtime oracle battery. Every check recomputes a quantity two
// independent ways; --inject-fault proves the battery can fail.

struct EquivReport {
    int failures = 0;
    void check(const std::string& name, bool ok, double worst) {
        std::printf("%s %s (max dev %.3g)\n", ok ? "PASS" : "FAIL", name.c_str(), worst);
        if (!ok) ++failures;
    }
};

int run_equiv(std::uint64_t seed, int trials, const std::string& inject_fault,
              const std::vector<std::int64_t>& sizes) {
    using namespace rmx;
    if (!inject_fault.empty() && inject_fault != "scan") {
        throw ValidationError("unknown fault target '" + inject_fault + "'");
    }
    for (std::int64_t s : sizes) {
        if (s < 1) throw ValidationError("--sizes entries must be >= 1");
    }
    Rng rng(seed);
    EquivReport report;

    {
        double worst = 0.0;
        for (int i = 0; i < trials; ++i) {
            const std::size_t T = sizes.empty()
                                      ? static_cast<std::size_t>(rng.uniform_int(1, 65))
                                      : static_cast<std::size_t>(
                                            sizes[static_cast<std::size_t>(i) % sizes.size()]);
            const std::size_t d = static_cast<std::size_t>(rng.uniform_int(1, 8));
            Array x({T, d}), g({T, d});
            for (double& v : x.flat()) v = rng.normal(0.0, 1.0);
            for (double& v : g.flat()) v = 1.0 / (1.0 + std::exp(-rng.normal(0.0, 1.0)));
            Array par = scan::parallel(x, g);
            if (inject_fault == "scan" && i == trials / 2) par[0] += 1e-3;
            const Array seq = scan::sequential(x, g);
            for (std::size_t j = 0; j < par.size(); ++j) {
                worst = std::max(worst, std::abs(par[j] - seq[j]));
            }
        }
        report.check("recurrence scan: parallel == sequential", worst < 1e-11, worst);
    }

    {
        double worst = 0.0;
        for (int i = 0; i < trials; ++i) {
            const std::size_t n = sizes.empty()
                                      ? static_cast<std::size_t>(rng.uniform_int(1, 48))
                                      : static_cast<std::size_t>(
                                            sizes[static_cast<std::size_t>(i) % sizes.size()]);
            const std::size_t d = 8;
            Array keys({n, d}), values({n, d});
            for (double& v : keys.flat()) v = rng.normal(0.0, 1.0);
            for (double& v : values.flat()) v = rng.normal(0.0, 1.0);
            std::vector<double> q(d);
            for (double& v : q) v = rng.normal(0.0, 1.0);
            AttendedSet all;
            for (std::size_t p = 0; p < n; ++p) {
                all.push_back({static_cast<std::int64_t>(p), EntryLabel::Local});
            }
            // Random contiguous partition into segments.
            std::vector<AttendedSet> segments;
            std::size_t at = 0;
            while (at < n) {
                const std::size_t len =
                    static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(n - at)));
                segments.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(at),
                                      all.begin() + static_cast<std::ptrdiff_t>(at + len));
                at += len;
            }
            const auto got = attend_online(q, keys, values, segments, 0.5);
            const auto want = attend_oracle(q, keys, values, all, 0.5);
            for (std::size_t j = 0; j < d; ++j) {
                worst = std::max(worst, std::abs(got[j] - want[j]));
            }
        }
        report.check("online attention == one-pass softmax", worst < 1e-12, worst);
    }

    {
        double worst = 0.0;
        const std::size_t T = 32;
        const std::size_t dm = 16;
        MixParams params;
        params.heads = 2;
        params.head_dim = 8;
        auto randm = [&rng](std::size_t r, std::size_t c) {
            Array a({r, c});
            for (double& v : a.flat()) v = rng.normal(0.0, 0.1);
            return a;
        };
        params.wq = randm(dm, 16);
        params.wk = randm(dm, 16);
        params.wv = randm(dm, 16);
        params.gate.w = randm(dm, 16);
        params.ogate.w = randm(dm, 16);
        params.wout = randm(16, dm);
        SparsePatternSpec topk;
        topk.topk = TopkSpec{8, 3, Scoring::Quest};
        topk.sinks = 2;
        for (const SparsePatternSpec& spec :
             {SparsePatternSpec::dense(), SparsePatternSpec::dilated(4, 3, 2), topk}) {
            Array x({T, dm});
            for (double& v : x.flat()) v = rng.normal(0.0, 1.0);
            MixConfig config;
            config.spec = spec;
            auto [batch_y, cache] = prefill(x, params, config);
            DilatedKVCache fresh(spec, config.rope, params.heads, params.head_dim);
            for (std::size_t t = 0; t < T; ++t) {
                const auto row = decode_step(fresh, x.row(t), params);
                for (std::size_t j = 0; j < dm; ++j) {
                    worst = std::max(worst, std::abs(row[j] - batch_y(t, j)));
                }
            }
            if (fresh.entry_count() != expected_cache_entries(static_cast<std::int64_t>(T) - 1, spec)) {
                worst = std::max(worst, 1.0);
            }
        }
        report.check("decode == prefill with exact cache occupancy", worst < 1e-9, worst);
    }

    {
        // Central finite difference of one mixing parameter coordinate.
        const std::size_t T = 6, dm = 6;
        MixParams params;
        params.heads = 1;
        params.head_dim = 4;
        auto randm = [&rng](std::size_t r, std::size_t c) {
            Array a({r, c});
            for (double& v : a.flat()) v = rng.normal(0.0, 0.3);
            return a;
        };
        params.wq = randm(dm, 4);
        params.wk = randm(dm, 4);
        params.wv = randm(dm, 4);
        params.gate.w = randm(dm, 4);
        params.ogate.w = randm(dm, 4);
        params.wout = randm(4, dm);
        Array x({T, dm});
        for (double& v : x.flat()) v = rng.normal(0.0, 1.0);
        Array w({T, dm});
        for (double& v : w.flat()) v = rng.normal(0.0, 1.0);
        MixConfig config;
        config.spec = SparsePatternSpec::dilated(2, 1, 1);

        auto loss = [&]() {
            const Array y = temporal_mixing_forward(x, params, config);
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
            return s;
        };
        MixRecord record;
        temporal_mixing_forward(x, params, config, &record);
        const MixGrads grads = temporal_mixing_backward(w, record, params, config);

        double worst = 0.0;
        const double h = 1e-5;
        for (std::size_t idx : {std::size_t{0}, std::size_t{7}, std::size_t{13}}) {
            const double keep = params.wk[idx];
            params.wk[idx] = keep + h;
            const double up = loss();
            params.wk[idx] = keep - h;
            const double down = loss();
            params.wk[idx] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(grads.dwk[idx]), 1e-8});
            worst = std::max(worst, std::abs(fd - grads.dwk[idx]) / denom);
        }
        report.check("mixing backward == finite differences", worst < 1e-4, worst);
    }

    {
        double worst = 0.0;
        RopeParams rope;
        for (int i = 0; i < trials; ++i) {
            std::vector<double> v(8), orig(8);
            for (double& z : v) z = rng.normal(0.0, 1.0);
            orig = v;
            const std::int64_t pos = rng.uniform_int(0, 4096);
            rope_apply_row(v, pos, rope);
            rope_unapply_row(v, pos, rope);
            for (std::size_t j = 0; j < v.size(); ++j) {
                worst = std::max(worst, std::abs(v[j] - orig[j]));
            }
        }
        report.check("rotation round-trip is the identity", worst < 1e-12, worst);
    }

    if (report.failures > 0) {
        std::printf("equivalence battery: %d failure(s)\n", report.failures);
        return kExitEquivalence;
    }
    std::printf("equivalence battery: all checks passed\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------

int run_train(const std::string& config_path, const std::vector<std::string>& overrides) {
    using namespace rmx;
    const RunConfig cfg = load_config(config_path, overrides);
    const std::string dir = cfg.resolved_out_dir();
    std::filesystem::create_directories(dir);
    const std::uint64_t hash = persist_effective_config(cfg, dir);

    const Corpus corpus = cfg.corpus.build(cfg.seed);
    Rng rng(cfg.seed);
    Parameters params = Parameters::init(cfg.model, rng);
    std::printf("training: mode=%s steps=%lld batch=%lld windows=%lld params=%lld\n",
                train_mode_name(cfg.train.mode).c_str(),
                static_cast<long long>(cfg.train.steps), static_cast<long long>(cfg.train.batch),
                static_cast<long long>(corpus.windows()), static_cast<long long>(params.count()));

    const TrainResult result = train_lm(params, cfg.model, corpus, cfg.train);
    write_loss_csv(dir + "/loss.csv", result.trace, hash, cfg.seed);
    save_checkpoint(dir + "/checkpoint.rmx", params, cfg.model, cfg.assignment, cfg.seed,
                    static_cast<std::int64_t>(result.trace.size()));
    write_manifest(dir, "train", hash, cfg.seed,
                   {"effective_config.json", "loss.csv", "checkpoint.rmx"});

    const LossRow& first = result.trace.front();
    const LossRow& last = result.trace.back();
    std::printf("loss %.4f -> %.4f over %zu updates (%lld tokens)\n", first.loss, last.loss,
                result.trace.size(), static_cast<long long>(result.tokens_seen));
    std::printf("wrote %s/loss.csv %s/checkpoint.rmx\n", dir.c_str(), dir.c_str());
    return kExitOk;
}

int run_adapt(const std::string& config_path, const std::string& ckpt_path,
              const std::vector<std::string>& overrides) {
    using namespace rmx;
    const RunConfig cfg = load_config(config_path, overrides);
    Checkpoint ck;
    try {
        ck = load_checkpoint(ckpt_path);
    } catch (const std::exception& e) {
        throw ValidationError(e.what());
    }
    const std::string dir = cfg.resolved_out_dir();
    std::filesystem::create_directories(dir);
    const std::uint64_t hash = persist_effective_config(cfg, dir);

    const Corpus corpus = cfg.corpus.build(cfg.seed);
    std::printf("adapting to %s: lr=%g budget=%lld tokens\n", cfg.adapt.target.label().c_str(),
                cfg.adapt.lr, static_cast<long long>(cfg.adapt.token_budget));
    const TrainResult result = adapt_lm(ck.params, ck.config, corpus, cfg.adapt);

    write_loss_csv(dir + "/adapt_loss.csv", result.trace, hash, cfg.seed);
    save_checkpoint(dir + "/adapted.rmx", ck.params, ck.config,
                    PatternAssignment::uniform(cfg.adapt.target), cfg.seed,
                    ck.steps_done + static_cast<std::int64_t>(result.trace.size()));
    write_manifest(dir, "adapt", hash, cfg.seed,
                   {"effective_config.json", "adapt_loss.csv", "adapted.rmx"});

    std::printf("loss %.4f -> %.4f over %zu updates\n", result.trace.front().loss,
                result.trace.back().loss, result.trace.size());
    std::printf("wrote %s/adapt_loss.csv %s/adapted.rmx\n", dir.c_str(), dir.c_str());
    return kExitOk;
}

int run_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::vector<std::string>& overrides) {
    using namespace rmx;
    const RunConfig cfg = load_config(config_path, overrides);
    Checkpoint ck;
    try {
        ck = load_checkpoint(ckpt_path);
    } catch (const std::exception& e) {
        throw ValidationError(e.what());
    }
    if (cfg.eval.patterns.empty()) throw ValidationError("eval: no patterns configured");
    const std::string dir = cfg.resolved_out_dir();
    std::filesystem::create_directories(dir);
    const std::uint64_t hash = persist_effective_config(cfg, dir);

    const Corpus corpus = cfg.corpus.build(cfg.seed + 1000003);  // held out from training data
    std::string csv = "pattern,ppl\n";
    std::printf("%-16s %10s\n", "pattern", "ppl");
    for (const SparsePatternSpec& spec : cfg.eval.patterns) {
        const double ppl = eval_ppl(ck.params, ck.config, corpus,
                                    PatternAssignment::uniform(spec), cfg.eval.max_tokens);
        std::printf("%-16s %10.4f\n", spec.label().c_str(), ppl);
        char line[96];
        std::snprintf(line, sizeof(line), "%s,%.6f\n", spec.label().c_str(), ppl);
        csv += line;
    }
    std::ofstream out(dir + "/ppl.csv");
    if (!out) throw std::runtime_error("cannot write ppl.csv");
    out << csv;
    out.close();
    write_manifest(dir, "eval", hash, cfg.seed, {"effective_config.json", "ppl.csv"});
    std::printf("wrote %s/ppl.csv\n", dir.c_str());
    return kExitOk;
}

int run_bench(std::int64_t T, const std::vector<std::int64_t>& dilations, std::int64_t window,
              std::int64_t sinks, std::int64_t heads, std::int64_t head_dim,
              std::int64_t model_dim, std::int64_t repeats, std::uint64_t seed,
              const std::string& out_path) {
    using namespace rmx;
    CostReport report;
    for (std::int64_t d : dilations) {
        SparsePatternSpec spec;
        spec.dilation = d;
        spec.window = d > 1 ? window : 0;
        spec.sinks = d > 1 ? sinks : 0;
        const BenchStats s = bench_operator(spec, T, heads, head_dim, model_dim, repeats, seed);
        const FlopsBreakdown f = flops_per_token(spec, T, heads, head_dim);
        report.rows.push_back({spec.label(), T, f.total, s.entries, s.decode_ns_median});
        std::printf("%-12s decode %12.0f ns/token (prefill %.1f ms, %lld cache entries)\n",
                    spec.label().c_str(), s.decode_ns_median, s.prefill_ms,
                    static_cast<long long>(s.entries));
    }
    std::fputs(report.to_markdown().c_str(), stdout);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
        out << report.to_csv();
        std::printf("wrote %s\n", out_path.c_str());
    }
    return kExitOk;
}

int run_cost(std::int64_t t, const std::vector<std::int64_t>& dilations, std::int64_t window,
             std::int64_t sinks, std::int64_t heads, std::int64_t head_dim,
             const std::string& out_path) {
    using namespace rmx;
    CostReport report;
    for (std::int64_t d : dilations) {
        SparsePatternSpec spec;
        spec.dilation = d;
        spec.window = d > 1 ? window : 0;
        spec.sinks = d > 1 ? sinks : 0;
        const FlopsBreakdown f = flops_per_token(spec, t, heads, head_dim);
        const CacheFootprint fp = cache_footprint(spec, t, heads, head_dim);
        report.rows.push_back({spec.label(), t + 1, f.total, fp.entries, -1.0});
    }
    std::fputs(report.to_markdown().c_str(), stdout);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
        out << report.to_csv();
        std::printf("wrote %s\n", out_path.c_str());
    }
    return kExitOk;
}

int run_decode_demo(const std::string& ckpt_path, std::int64_t prompt_len, std::int64_t gen,
                    std::int64_t dilation, std::int64_t window, std::int64_t sinks,
                    std::uint64_t seed) {
    using namespace rmx;
    Checkpoint ck;
    try {
        ck = load_checkpoint(ckpt_path);
    } catch (const std::exception& e) {
        throw ValidationError(e.what());
    }
    SparsePatternSpec spec;
    spec.dilation = dilation;
    spec.window = dilation > 1 ? window : 0;
    spec.sinks = dilation > 1 ? sinks : 0;
    if (prompt_len + gen > ck.config.context) {
        throw ValidationError("prompt plus generation exceeds the model context");
    }

    // A periodic prompt makes the continuation verifiable at a glance.
    const Corpus prompt_src =
        synth_task_generate(SynthTask::Copy, ck.config.context, ck.config.context,
                            std::min<std::int64_t>(ck.config.vocab, 32), seed);
    std::vector<std::int32_t> tokens(prompt_src.tokens.begin(),
                                     prompt_src.tokens.begin() + prompt_len);

    ModelDecoder dec(ck.params, ck.config, PatternAssignment::uniform(spec));
    std::vector<double> logits;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::int32_t tok : tokens) logits = dec.step(tok);
    std::vector<std::int32_t> generated;
    for (std::int64_t i = 0; i < gen; ++i) {
        std::int32_t best = 0;
        for (std::size_t v = 1; v < logits.size(); ++v) {
            if (logits[v] > logits[static_cast<std::size_t>(best)]) {
                best = static_cast<std::int32_t>(v);
            }
        }
        generated.push_back(best);
        logits = dec.step(best);
    }
    const auto t1 = std::chrono::steady_clock::now();

    auto print_tokens = [](const char* label, const std::vector<std::int32_t>& ts) {
        std::printf("%s", label);
        for (std::int32_t t : ts) std::printf(" %d", t);
        std::printf("\n");
    };
    print_tokens("prompt:    ", tokens);
    print_tokens("generated: ", generated);

    std::int64_t matches = 0;
    for (std::int64_t i = 0; i < gen; ++i) {
        if (generated[static_cast<std::size_t>(i)] ==
            prompt_src.tokens[static_cast<std::size_t>(prompt_len + i)]) {
            ++matches;
        }
    }
    const double ms =
        std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(t1 - t0).count();
    const CacheFootprint fp = dec.footprint();
    SparsePatternSpec dense = SparsePatternSpec::dense();
    const CacheFootprint dense_fp =
        cache_footprint(dense, dec.position() - 1, ck.config.heads, ck.config.head_dim);
    std::printf("pattern continuation: %lld/%lld tokens correct\n",
                static_cast<long long>(matches), static_cast<long long>(gen));
    std::printf("cache: %lld entries/layer vs %lld dense (%.2fx), %.2f ms total\n",
                static_cast<long long>(fp.entries / ck.config.layers),
                static_cast<long long>(dense_fp.entries),
                static_cast<double>(dense_fp.entries) /
                    static_cast<double>(fp.entries / ck.config.layers),
                ms);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dilated-attention temporal mixing toolkit"};
    app.require_subcommand(1);

    // equiv
    auto* equiv = app.add_subcommand("equiv", "run the runtime equivalence battery");
    std::uint64_t eq_seed = 1234;
    int eq_trials = 25;
    std::string eq_fault;
    std::vector<std::int64_t> eq_sizes;
    equiv->add_option("--seed", eq_seed, "rng seed");
    equiv->add_option("--trials", eq_trials, "trials per check")->check(CLI::PositiveNumber);
    equiv->add_option("--sizes", eq_sizes, "sequence lengths to cycle instead of random ones");
    equiv->add_option("--inject-fault", eq_fault,
                      "deliberately corrupt one result (value: scan) to prove detection");

    // train / adapt / eval share config + overrides
    std::string config_path, ckpt_path;
    std::vector<std::string> overrides;
    auto* train = app.add_subcommand("train", "train a model per the config");
    train->add_option("--config", config_path, "run config json")->required();
    train->add_option("--set", overrides, "dotted-path override key=value");

    auto* adapt = app.add_subcommand("adapt", "continue training toward one pattern");
    adapt->add_option("--config", config_path, "run config json")->required();
    adapt->add_option("--checkpoint", ckpt_path, "checkpoint to adapt")->required();
    adapt->add_option("--set", overrides, "dotted-path override key=value");

    auto* eval = app.add_subcommand("eval", "perplexity per configured pattern");
    eval->add_option("--config", config_path, "run config json")->required();
    eval->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate")->required();
    eval->add_option("--set", overrides, "dotted-path override key=value");

    // bench
    auto* bench = app.add_subcommand("bench", "wall-clock decode benchmark");
    std::int64_t b_T = 4096, b_window = 0, b_sinks = 4, b_heads = 2, b_head_dim = 16,
                 b_model_dim = 32, b_repeats = 32;
    std::uint64_t b_seed = 5;
    std::vector<std::int64_t> b_dilations{1, 16};
    std::string b_out;
    bench->add_option("--t", b_T, "prefill length")->check(CLI::PositiveNumber);
    bench->add_option("--dilations", b_dilations, "dilations to measure");
    bench->add_option("--window", b_window, "local window for sparse rows");
    bench->add_option("--sinks", b_sinks, "sink tokens for sparse rows");
    bench->add_option("--heads", b_heads, "attention heads");
    bench->add_option("--head-dim", b_head_dim, "head width");
    bench->add_option("--model-dim", b_model_dim, "model width");
    bench->add_option("--repeats", b_repeats, "timed decode steps")->check(CLI::PositiveNumber);
    bench->add_option("--seed", b_seed, "rng seed");
    bench->add_option("--out", b_out, "csv output path");

    // cost
    auto* cost = app.add_subcommand("cost", "analytic per-token cost table");
    std::int64_t c_t = 65535, c_window = 0, c_sinks = 4, c_heads = 8, c_head_dim = 64;
    std::vector<std::int64_t> c_dilations{1, 2, 4, 8, 16, 32, 64};
    std::string c_out;
    cost->add_option("--t", c_t, "decode position")->check(CLI::NonNegativeNumber);
    cost->add_option("--dilations", c_dilations, "dilations to tabulate");
    cost->add_option("--window", c_window, "local window for sparse rows");
    cost->add_option("--sinks", c_sinks, "sink tokens for sparse rows");
    cost->add_option("--heads", c_heads, "attention heads");
    cost->add_option("--head-dim", c_head_dim, "head width");
    cost->add_option("--out", c_out, "csv output path");

    // decode-demo
    auto* demo = app.add_subcommand("decode-demo", "greedy generation with cache stats");
    std::string d_ckpt;
    std::int64_t d_prompt = 32, d_gen = 32, d_dilation = 8, d_window = 0, d_sinks = 4;
    std::uint64_t d_seed = 9;
    demo->add_option("--checkpoint", d_ckpt, "model checkpoint")->required();
    demo->add_option("--prompt-len", d_prompt, "prompt tokens")->check(CLI::PositiveNumber);
    demo->add_option("--gen", d_gen, "tokens to generate")->check(CLI::PositiveNumber);
    demo->add_option("--dilation", d_dilation, "decode pattern dilation");
    demo->add_option("--window", d_window, "decode pattern local window");
    demo->add_option("--sinks", d_sinks, "decode pattern sinks");
    demo->add_option("--seed", d_seed, "prompt seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Usage problems are validation failures; --help is a success.
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (equiv->parsed()) return run_equiv(eq_seed, eq_trials, eq_fault, eq_sizes);
        if (train->parsed()) return run_train(config_path, overrides);
        if (adapt->parsed()) return run_adapt(config_path, ckpt_path, overrides);
        if (eval->parsed()) return run_eval(config_path, ckpt_path, overrides);
        if (bench->parsed()) {
            return run_bench(b_T, b_dilations, b_window, b_sinks, b_heads, b_head_dim,
                             b_model_dim, b_repeats, b_seed, b_out);
        }
        if (cost->parsed()) {
            return run_cost(c_t, c_dilations, c_window, c_sinks, c_heads, c_head_dim, c_out);
        }
        if (demo->parsed()) {
            return run_decode_demo(d_ckpt, d_prompt, d_gen, d_dilation, d_window, d_sinks, d_seed);
        }
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime fault: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitValidation;
}
