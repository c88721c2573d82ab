#include "rmx/train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "rmx/container_io.hpp"

namespace rmx {

namespace {

constexpr char kCheckpointMagic[] = "RMX1";

// Pairs every parameter tensor with its gradient/state tensor by visit order.
template <typename Fn>
void visit_pairs(Parameters& a, const Parameters& b, Fn&& fn) {
    std::vector<Array*> av;
    a.visit([&av](const std::string&, Array& t) { av.push_back(&t); });
    std::vector<const Array*> bv;
    b.visit([&bv](const std::string&, const Array& t) { bv.push_back(&t); });
    if (av.size() != bv.size()) throw std::runtime_error("train: parameter structure mismatch");
    for (std::size_t i = 0; i < av.size(); ++i) fn(*av[i], *bv[i]);
}

struct PassResult {
    double loss = 0.0;
};

// Averaged loss and gradients for one batch of windows under one pattern.
PassResult run_pass(Parameters& params, const ModelConfig& config, const Corpus& corpus,
                    const std::vector<std::int64_t>& windows, const PatternAssignment& assignment,
                    Parameters& grads) {
    grads.visit([](const std::string&, Array& a) { a.fill(0.0); });
    double loss_sum = 0.0;
    for (std::int64_t w : windows) {
        LmRecord record;
        const auto seq = corpus.window(w);
        forward_lm(params, config, seq, assignment, &record);
        loss_sum += lm_loss(record.logits, seq);
        backward_lm(params, config, record, assignment, grads);
    }
    const double inv = 1.0 / static_cast<double>(windows.size());
    grads.visit([inv](const std::string&, Array& a) {
        for (double& v : a.flat()) v *= inv;
    });
    return {loss_sum * inv};
}

std::vector<std::int64_t> sample_windows(Rng& rng, std::int64_t n_windows, std::int64_t batch) {
    std::vector<std::int64_t> out(static_cast<std::size_t>(batch));
    for (auto& w : out) w = rng.uniform_int(0, n_windows - 1);
    return out;
}

}  // namespace

TrainMode train_mode_from_name(const std::string& name) {
    std::string upper;
    for (char c : name) upper.push_back(static_cast<char>(std::toupper(c)));
    if (upper == "JOINT") return TrainMode::Joint;
    if (upper == "DENSE_ONLY") return TrainMode::DenseOnly;
    if (upper == "SUMMED_LOSS") return TrainMode::SummedLoss;
    throw std::runtime_error("train: unknown mode '" + name + "'");
}

std::string train_mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::Joint: return "JOINT";
        case TrainMode::DenseOnly: return "DENSE_ONLY";
        case TrainMode::SummedLoss: return "SUMMED_LOSS";
    }
    throw std::runtime_error("train: bad mode enum");
}

void AdamW::step(Parameters& params, const Parameters& grads, double lr) {
    if (!m_) {
        m_ = params.zeros_like();
        v_ = params.zeros_like();
    }
    ++steps_done;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps_done));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps_done));

    std::vector<Array*> pv, mv, vv;
    std::vector<const Array*> gv;
    params.visit([&pv](const std::string&, Array& t) { pv.push_back(&t); });
    grads.visit([&gv](const std::string&, const Array& t) { gv.push_back(&t); });
    m_->visit([&mv](const std::string&, Array& t) { mv.push_back(&t); });
    v_->visit([&vv](const std::string&, Array& t) { vv.push_back(&t); });
    if (pv.size() != gv.size()) throw std::runtime_error("adamw: parameter structure mismatch");

    for (std::size_t i = 0; i < pv.size(); ++i) {
        Array& p = *pv[i];
        const Array& g = *gv[i];
        Array& m = *mv[i];
        Array& v = *vv[i];
        const bool decay = p.rank() > 1;
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            double upd = mhat / (std::sqrt(vhat) + eps);
            if (decay) upd += weight_decay * p[j];
            p[j] -= lr * upd;
        }
    }
}

double clip_global_norm(Parameters& grads, double max_norm) {
    double sq = 0.0;
    grads.visit([&sq](const std::string&, const Array& a) {
        for (double v : a.flat()) sq += v * v;
    });
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        grads.visit([scale](const std::string&, Array& a) {
            for (double& v : a.flat()) v *= scale;
        });
    }
    return norm;
}

double lr_at(std::int64_t step, std::int64_t total_steps, double peak, double warmup_frac,
             double final_frac) {
    if (total_steps <= 0) throw std::runtime_error("train: total_steps must be positive");
    const auto warmup = static_cast<std::int64_t>(
        std::ceil(warmup_frac * static_cast<double>(total_steps)));
    if (step < warmup) {
        return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const double final_lr = peak * final_frac;
    const auto span = static_cast<double>(std::max<std::int64_t>(total_steps - warmup, 1));
    const double frac = static_cast<double>(step - warmup) / span;
    return final_lr + 0.5 * (peak - final_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

void TrainSpec::validate() const {
    if (steps <= 0 || batch <= 0) throw std::runtime_error("train: steps and batch must be positive");
    if (peak_lr <= 0.0) throw std::runtime_error("train: peak_lr must be positive");
    if (warmup_frac < 0.0 || warmup_frac >= 1.0) throw std::runtime_error("train: warmup_frac in [0,1)");
    if (final_lr_frac < 0.0 || final_lr_frac > 1.0) throw std::runtime_error("train: final_lr_frac in [0,1]");
    if (clip <= 0.0) throw std::runtime_error("train: clip must be positive");
    sparse.validate();
    dense.validate();
}

TrainResult train_lm(Parameters& params, const ModelConfig& config, const Corpus& corpus,
                     const TrainSpec& spec) {
    spec.validate();
    if (corpus.windows() <= 0) throw std::runtime_error("train: corpus has no full window");
    if (corpus.seq_len > config.context) throw std::runtime_error("train: window exceeds context");
    if (corpus.vocab > config.vocab) throw std::runtime_error("train: corpus vocab exceeds model vocab");

    AdamW opt;
    opt.beta1 = spec.beta1;
    opt.beta2 = spec.beta2;
    opt.weight_decay = spec.weight_decay;

    Rng rng(spec.seed);
    Parameters grads = params.zeros_like();
    TrainResult result;
    std::int64_t update = 0;

    const auto sparse_assign = PatternAssignment::uniform(spec.sparse);
    const auto dense_assign = PatternAssignment::uniform(spec.dense);

    for (std::int64_t step = 0; step < spec.steps; ++step) {
        const double lr = lr_at(step, spec.steps, spec.peak_lr, spec.warmup_frac,
                                spec.final_lr_frac);
        const auto windows = sample_windows(rng, corpus.windows(), spec.batch);

        auto apply = [&](const PatternAssignment& assign, const std::string& label,
                         const std::vector<std::int64_t>& batch_windows) {
            const PassResult pr = run_pass(params, config, corpus, batch_windows, assign, grads);
            clip_global_norm(grads, spec.clip);
            opt.step(params, grads, lr);
            result.trace.push_back({update++, pr.loss, lr, label});
            result.tokens_seen += static_cast<std::int64_t>(batch_windows.size()) * corpus.seq_len;
        };

        switch (spec.mode) {
            case TrainMode::Joint: {
                apply(sparse_assign, spec.sparse.label(), windows);
                const auto dense_windows =
                    spec.shared_batch ? windows : sample_windows(rng, corpus.windows(), spec.batch);
                apply(dense_assign, spec.dense.label(), dense_windows);
                break;
            }
            case TrainMode::DenseOnly: {
                apply(dense_assign, spec.dense.label(), windows);
                break;
            }
            case TrainMode::SummedLoss: {
                // Half-weighted gradients of both patterns in one update.
                Parameters sum = params.zeros_like();
                const PassResult a =
                    run_pass(params, config, corpus, windows, sparse_assign, grads);
                visit_pairs(sum, grads, [](Array& dst, const Array& src) {
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += 0.5 * src[i];
                });
                const PassResult b = run_pass(params, config, corpus, windows, dense_assign, grads);
                visit_pairs(sum, grads, [](Array& dst, const Array& src) {
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += 0.5 * src[i];
                });
                clip_global_norm(sum, spec.clip);
                opt.step(params, sum, lr);
                result.trace.push_back(
                    {update++, 0.5 * a.loss + 0.5 * b.loss, lr,
                     spec.sparse.label() + "+" + spec.dense.label()});
                result.tokens_seen += static_cast<std::int64_t>(windows.size()) * corpus.seq_len * 2;
                break;
            }
        }
    }
    return result;
}

TrainResult adapt_lm(Parameters& params, const ModelConfig& config, const Corpus& corpus,
                     const AdaptSpec& spec) {
    spec.target.validate();
    if (spec.lr <= 0.0) throw std::runtime_error("adapt: lr must be positive");
    if (spec.token_budget <= 0 || spec.batch <= 0) {
        throw std::runtime_error("adapt: token_budget and batch must be positive");
    }
    if (corpus.windows() <= 0) throw std::runtime_error("adapt: corpus has no full window");

    AdamW opt;
    opt.weight_decay = spec.weight_decay;
    Rng rng(spec.seed);
    Parameters grads = params.zeros_like();
    TrainResult result;
    const auto assign = PatternAssignment::uniform(spec.target);
    const std::int64_t tokens_per_step = spec.batch * corpus.seq_len;

    std::int64_t update = 0;
    while (result.tokens_seen < spec.token_budget) {
        const auto windows = sample_windows(rng, corpus.windows(), spec.batch);
        const PassResult pr = run_pass(params, config, corpus, windows, assign, grads);
        clip_global_norm(grads, spec.clip);
        opt.step(params, grads, spec.lr);
        result.trace.push_back({update++, pr.loss, spec.lr, spec.target.label()});
        result.tokens_seen += tokens_per_step;
    }
    return result;
}

double eval_ppl(const Parameters& params, const ModelConfig& config, const Corpus& corpus,
                const PatternAssignment& assignment, std::int64_t max_tokens) {
    if (corpus.windows() <= 0) throw std::runtime_error("eval: corpus has no full window");
    double nll_sum = 0.0;
    std::int64_t predicted = 0;
    std::int64_t consumed = 0;
    for (std::int64_t w = 0; w < corpus.windows(); ++w) {
        if (max_tokens > 0 && consumed >= max_tokens) break;
        const auto seq = corpus.window(w);
        const Array logits = forward_lm(params, config, seq, assignment);
        const double mean_nll = lm_loss(logits, seq);
        nll_sum += mean_nll * static_cast<double>(seq.size() - 1);
        predicted += static_cast<std::int64_t>(seq.size()) - 1;
        consumed += static_cast<std::int64_t>(seq.size());
    }
    return std::exp(nll_sum / static_cast<double>(predicted));
}

void write_loss_csv(const std::string& path, const std::vector<LossRow>& trace,
                    std::uint64_t config_hash, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("train: cannot write '" + path + "'");
    char head[128];
    std::snprintf(head, sizeof(head), "# config_hash=%016llx seed=%llu\n",
                  static_cast<unsigned long long>(config_hash),
                  static_cast<unsigned long long>(seed));
    out << head << "step,loss,lr,pattern\n";
    char line[192];
    for (const LossRow& r : trace) {
        std::snprintf(line, sizeof(line), "%lld,%.10g,%.10g,%s\n",
                      static_cast<long long>(r.step), r.loss, r.lr, r.pattern.c_str());
        out << line;
    }
    if (!out) throw std::runtime_error("train: failed writing '" + path + "'");
}

void save_checkpoint(const std::string& path, const Parameters& params,
                     const ModelConfig& config, const PatternAssignment& assignment,
                     std::uint64_t seed, std::int64_t steps_done) {
    io::Container c;
    c.magic = kCheckpointMagic;
    nlohmann::json meta{{"kind", "checkpoint"},
                        {"config", config.to_json()},
                        {"assignment", nlohmann::json::parse(assignment.to_json())},
                        {"seed", seed},
                        {"steps_done", steps_done}};
    c.meta_json = meta.dump();
    params.visit([&c](const std::string& name, const Array& a) { c.add(name, a); });
    save_container(path, c);
}

Checkpoint load_checkpoint(const std::string& path) {
    const io::Container c = io::load_container(path, kCheckpointMagic);
    const auto meta = nlohmann::json::parse(c.meta_json);
    Checkpoint ck;
    ck.config = ModelConfig::from_json(meta.at("config"));
    ck.assignment = PatternAssignment::from_json(meta.at("assignment").dump());
    ck.seed = meta.value("seed", std::uint64_t{0});
    ck.steps_done = meta.value("steps_done", std::int64_t{0});

    Rng shape_rng(0);
    ck.params = Parameters::init(ck.config, shape_rng);
    ck.params.visit([&c](const std::string& name, Array& a) {
        const Array& stored = c.require(name);
        if (!stored.same_shape(a)) {
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        }
        a = stored;
    });
    return ck;
}

}  // namespace rmx
