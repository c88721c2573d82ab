#include "rmx/model.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace rmx {

namespace {

constexpr double kNormEps = 1e-6;

void require_fields(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                    const char* what) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* name : allowed) {
            if (it.key() == name) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw std::runtime_error(std::string(what) + ": unknown field '" + it.key() + "'");
        }
    }
}

// Row-wise rms normalization that also returns each row's inverse rms, the
// only extra state the backward pass needs.
void rms_forward(const Array& x, const Array& w, Array& out, std::vector<double>& inv) {
    const std::size_t T = x.dim(0);
    const std::size_t n = x.dim(1);
    out = Array({T, n});
    inv.assign(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        auto xr = x.row(t);
        double ms = 0.0;
        for (double v : xr) ms += v * v;
        const double r = 1.0 / std::sqrt(ms / static_cast<double>(n) + kNormEps);
        inv[t] = r;
        auto o = out.row(t);
        for (std::size_t j = 0; j < n; ++j) o[j] = xr[j] * r * w[j];
    }
}

// Backward of rms_forward. Adds into dx and dw.
void rms_backward(const Array& dy, const Array& x, const Array& w,
                  const std::vector<double>& inv, Array& dx, Array& dw) {
    const std::size_t T = x.dim(0);
    const std::size_t n = x.dim(1);
    for (std::size_t t = 0; t < T; ++t) {
        auto dyr = dy.row(t);
        auto xr = x.row(t);
        auto dxr = dx.row(t);
        const double r = inv[t];
        double mix = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            dw[j] += dyr[j] * xr[j] * r;
            mix += dyr[j] * w[j] * xr[j];
        }
        const double c = mix * r * r * r / static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
            dxr[j] += r * w[j] * dyr[j] - c * xr[j];
        }
    }
}

double silu_grad(double a) {
    const double s = 1.0 / (1.0 + std::exp(-a));
    return s * (1.0 + a * (1.0 - s));
}

}  // namespace

std::int64_t ModelConfig::resolved_ffn_dim() const {
    if (ffn_dim > 0) return ffn_dim;
    return static_cast<std::int64_t>(std::llround(8.0 / 3.0 * static_cast<double>(model_dim)));
}

void ModelConfig::validate() const {
    if (vocab < 2) throw std::runtime_error("model: vocab must be at least 2");
    if (model_dim <= 0 || layers <= 0 || heads <= 0 || head_dim <= 0 || context <= 0) {
        throw std::runtime_error("model: dimensions must be positive");
    }
    if (head_dim % 2 != 0) throw std::runtime_error("model: head_dim must be even");
    if (ffn_dim < 0) throw std::runtime_error("model: ffn_dim must be non-negative");
    if (rope.base <= 1.0) throw std::runtime_error("model: rope base must exceed 1");
}

nlohmann::json ModelConfig::to_json() const {
    return nlohmann::json{{"vocab", vocab},       {"model_dim", model_dim},
                          {"layers", layers},     {"heads", heads},
                          {"head_dim", head_dim}, {"ffn_dim", ffn_dim},
                          {"context", context},
                          {"rope", {{"enabled", rope.enabled}, {"base", rope.base}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    require_fields(j, {"vocab", "model_dim", "layers", "heads", "head_dim", "ffn_dim",
                       "context", "rope"},
                   "model config");
    ModelConfig c;
    if (j.contains("vocab")) c.vocab = j.at("vocab").get<std::int64_t>();
    if (j.contains("model_dim")) c.model_dim = j.at("model_dim").get<std::int64_t>();
    if (j.contains("layers")) c.layers = j.at("layers").get<std::int64_t>();
    if (j.contains("heads")) c.heads = j.at("heads").get<std::int64_t>();
    if (j.contains("head_dim")) c.head_dim = j.at("head_dim").get<std::int64_t>();
    if (j.contains("ffn_dim")) c.ffn_dim = j.at("ffn_dim").get<std::int64_t>();
    if (j.contains("context")) c.context = j.at("context").get<std::int64_t>();
    if (j.contains("rope")) {
        const auto& r = j.at("rope");
        require_fields(r, {"enabled", "base"}, "rope config");
        if (r.contains("enabled")) c.rope.enabled = r.at("enabled").get<bool>();
        if (r.contains("base")) c.rope.base = r.at("base").get<double>();
    }
    c.validate();
    return c;
}

void Parameters::visit(const std::function<void(const std::string&, Array&)>& fn) {
    fn("embed", embed);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        BlockParams& b = blocks[l];
        fn(p + "attn_norm", b.attn_norm);
        fn(p + "wq", b.mix.wq);
        fn(p + "wk", b.mix.wk);
        fn(p + "wv", b.mix.wv);
        fn(p + "w_gate", b.mix.gate.w);
        fn(p + "w_ogate", b.mix.ogate.w);
        fn(p + "wout", b.mix.wout);
        fn(p + "ffn_norm", b.ffn_norm);
        fn(p + "w_ffn_gate", b.w_ffn_gate);
        fn(p + "w_ffn_up", b.w_ffn_up);
        fn(p + "w_ffn_down", b.w_ffn_down);
    }
    fn("final_norm", final_norm);
    fn("lm_head", lm_head);
}

void Parameters::visit(const std::function<void(const std::string&, const Array&)>& fn) const {
    const_cast<Parameters*>(this)->visit(
        [&fn](const std::string& name, Array& a) { fn(name, a); });
}

Parameters Parameters::zeros_like() const {
    Parameters z = *this;
    z.visit([](const std::string&, Array& a) { a.fill(0.0); });
    return z;
}

std::int64_t Parameters::count() const {
    std::int64_t n = 0;
    visit([&n](const std::string&, const Array& a) { n += static_cast<std::int64_t>(a.size()); });
    return n;
}

Parameters Parameters::init(const ModelConfig& config, Rng& rng) {
    config.validate();
    const std::size_t dm = static_cast<std::size_t>(config.model_dim);
    const std::size_t gd = static_cast<std::size_t>(config.heads * config.head_dim);
    const std::size_t ff = static_cast<std::size_t>(config.resolved_ffn_dim());
    const std::size_t vocab = static_cast<std::size_t>(config.vocab);

    Parameters p;
    p.embed = Array({vocab, dm});
    p.blocks.resize(static_cast<std::size_t>(config.layers));
    for (BlockParams& b : p.blocks) {
        b.attn_norm = Array({dm}, 1.0);
        b.mix.wq = Array({dm, gd});
        b.mix.wk = Array({dm, gd});
        b.mix.wv = Array({dm, gd});
        b.mix.gate.w = Array({dm, gd});
        b.mix.ogate.w = Array({dm, gd});
        b.mix.wout = Array({gd, dm});
        b.mix.heads = config.heads;
        b.mix.head_dim = config.head_dim;
        b.ffn_norm = Array({dm}, 1.0);
        b.w_ffn_gate = Array({dm, ff});
        b.w_ffn_up = Array({dm, ff});
        b.w_ffn_down = Array({ff, dm});
    }
    p.final_norm = Array({dm}, 1.0);
    p.lm_head = Array({dm, vocab});

    p.visit([&rng](const std::string&, Array& a) {
        if (a.rank() == 1) return;  // norm weights stay at one
        for (double& v : a.flat()) v = rng.normal(0.0, 0.02);
    });
    return p;
}

MixConfig mix_config_for_layer(const ModelConfig& config, const PatternAssignment& assignment,
                               std::int64_t layer) {
    MixConfig mc;
    mc.rope = config.rope;
    mc.spec = assignment.resolve(layer, 0);
    bool uniform = true;
    std::vector<SparsePatternSpec> specs;
    specs.reserve(static_cast<std::size_t>(config.heads));
    for (std::int64_t h = 0; h < config.heads; ++h) {
        specs.push_back(assignment.resolve(layer, h));
        if (!(specs.back() == mc.spec)) uniform = false;
    }
    if (!uniform) mc.head_specs = std::move(specs);
    return mc;
}

Array forward_lm(const Parameters& params, const ModelConfig& config,
                 std::span<const std::int32_t> tokens, const PatternAssignment& assignment,
                 LmRecord* record) {
    config.validate();
    if (tokens.empty()) throw std::runtime_error("forward_lm: empty token sequence");
    if (static_cast<std::int64_t>(tokens.size()) > config.context) {
        throw std::runtime_error("forward_lm: sequence exceeds the model context");
    }
    const std::size_t T = tokens.size();
    const std::size_t dm = static_cast<std::size_t>(config.model_dim);

    Array x({T, dm});
    for (std::size_t t = 0; t < T; ++t) {
        const auto tok = tokens[t];
        if (tok < 0 || tok >= config.vocab) throw std::runtime_error("forward_lm: token out of range");
        auto er = params.embed.row(static_cast<std::size_t>(tok));
        std::copy(er.begin(), er.end(), x.row(t).begin());
    }

    if (record != nullptr) {
        record->tokens.assign(tokens.begin(), tokens.end());
        record->blocks.assign(params.blocks.size(), BlockRecord{});
    }

    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        const BlockParams& b = params.blocks[l];
        BlockRecord* br = record != nullptr ? &record->blocks[l] : nullptr;
        const MixConfig mc = mix_config_for_layer(config, assignment, static_cast<std::int64_t>(l));

        Array normed1;
        std::vector<double> inv1;
        rms_forward(x, b.attn_norm, normed1, inv1);
        MixRecord mix_tape;
        Array attn_out =
            temporal_mixing_forward(normed1, b.mix, mc, br != nullptr ? &mix_tape : nullptr);
        Array x_mid = x;
        for (std::size_t i = 0; i < x_mid.size(); ++i) x_mid[i] += attn_out[i];

        Array normed2;
        std::vector<double> inv2;
        rms_forward(x_mid, b.ffn_norm, normed2, inv2);
        Array a = matmul(normed2, b.w_ffn_gate);
        Array up = matmul(normed2, b.w_ffn_up);
        Array h = a;
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = silu(a[i]) * up[i];
        Array ffn_out = matmul(h, b.w_ffn_down);

        if (br != nullptr) {
            br->x_in = std::move(x);
            br->normed1 = std::move(normed1);
            br->inv1 = std::move(inv1);
            br->mix = std::move(mix_tape);
            br->x_mid = x_mid;
            br->normed2 = std::move(normed2);
            br->inv2 = std::move(inv2);
            br->ffn_a = std::move(a);
            br->ffn_b = std::move(up);
            br->ffn_h = std::move(h);
        }
        x = std::move(x_mid);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += ffn_out[i];
    }

    Array normed_f;
    std::vector<double> inv_f;
    rms_forward(x, params.final_norm, normed_f, inv_f);
    Array logits = matmul(normed_f, params.lm_head);
    ensure_finite(logits, "forward_lm");

    if (record != nullptr) {
        record->x_final = std::move(x);
        record->normed_f = std::move(normed_f);
        record->inv_f = std::move(inv_f);
        record->logits = logits;
    }
    return logits;
}

double lm_loss(const Array& logits, std::span<const std::int32_t> tokens) {
    const std::size_t T = tokens.size();
    if (logits.rank() != 2 || logits.dim(0) != T) {
        throw std::runtime_error("lm_loss: logits/token shape mismatch");
    }
    if (T < 2) throw std::runtime_error("lm_loss: need at least two tokens");
    const std::size_t vocab = logits.dim(1);
    double total = 0.0;
    std::vector<double> row(vocab);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        auto lr = logits.row(t);
        std::copy(lr.begin(), lr.end(), row.begin());
        double m = row[0];
        for (double v : row) m = std::max(m, v);
        double s = 0.0;
        for (double v : row) s += std::exp(v - m);
        const auto target = static_cast<std::size_t>(tokens[t + 1]);
        total += std::log(s) + m - row[target];
    }
    return total / static_cast<double>(T - 1);
}

void backward_lm(const Parameters& params, const ModelConfig& config, const LmRecord& record,
                 const PatternAssignment& assignment, Parameters& grads) {
    const std::size_t T = record.tokens.size();
    const std::size_t vocab = static_cast<std::size_t>(config.vocab);
    if (T < 2) throw std::runtime_error("backward_lm: need at least two tokens");

    // Loss gradient; the final position predicts nothing.
    Array dlogits({T, vocab});
    const double inv_n = 1.0 / static_cast<double>(T - 1);
    std::vector<double> row(vocab);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        auto lr = record.logits.row(t);
        std::copy(lr.begin(), lr.end(), row.begin());
        softmax_stable(row);
        auto dr = dlogits.row(t);
        for (std::size_t j = 0; j < vocab; ++j) dr[j] = row[j] * inv_n;
        dr[static_cast<std::size_t>(record.tokens[t + 1])] -= inv_n;
    }

    {
        Array dlm_head = matmul_tn(record.normed_f, dlogits);
        for (std::size_t i = 0; i < dlm_head.size(); ++i) grads.lm_head[i] += dlm_head[i];
    }
    Array dnormed_f = matmul_nt(dlogits, params.lm_head);
    Array dx(record.x_final.shape());
    rms_backward(dnormed_f, record.x_final, params.final_norm, record.inv_f, dx,
                 grads.final_norm);

    for (std::size_t li = params.blocks.size(); li-- > 0;) {
        const BlockParams& b = params.blocks[li];
        BlockParams& gb = grads.blocks[li];
        const BlockRecord& br = record.blocks[li];
        const MixConfig mc =
            mix_config_for_layer(config, assignment, static_cast<std::int64_t>(li));

        // FFN sublayer: x_out = x_mid + (silu(n2 Wg) * (n2 Wu)) Wd.
        Array dh = matmul_nt(dx, b.w_ffn_down);
        {
            Array dwd = matmul_tn(br.ffn_h, dx);
            for (std::size_t i = 0; i < dwd.size(); ++i) gb.w_ffn_down[i] += dwd[i];
        }
        Array da(br.ffn_a.shape());
        Array db(br.ffn_a.shape());
        for (std::size_t i = 0; i < dh.size(); ++i) {
            da[i] = dh[i] * br.ffn_b[i] * silu_grad(br.ffn_a[i]);
            db[i] = dh[i] * silu(br.ffn_a[i]);
        }
        {
            Array dwg = matmul_tn(br.normed2, da);
            Array dwu = matmul_tn(br.normed2, db);
            for (std::size_t i = 0; i < dwg.size(); ++i) {
                gb.w_ffn_gate[i] += dwg[i];
                gb.w_ffn_up[i] += dwu[i];
            }
        }
        Array dn2 = matmul_nt(da, b.w_ffn_gate);
        {
            Array dn2u = matmul_nt(db, b.w_ffn_up);
            for (std::size_t i = 0; i < dn2.size(); ++i) dn2[i] += dn2u[i];
        }
        // dx currently holds the gradient at x_out; the residual passes it
        // through to x_mid, and the norm path adds its share.
        rms_backward(dn2, br.x_mid, b.ffn_norm, br.inv2, dx, gb.ffn_norm);

        // Attention sublayer: x_mid = x_in + mix(rms(x_in)).
        MixGrads mg = temporal_mixing_backward(dx, br.mix, b.mix, mc);
        auto add = [](Array& dst, const Array& src) {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        };
        add(gb.mix.wq, mg.dwq);
        add(gb.mix.wk, mg.dwk);
        add(gb.mix.wv, mg.dwv);
        add(gb.mix.gate.w, mg.dwg);
        add(gb.mix.ogate.w, mg.dwog);
        add(gb.mix.wout, mg.dwout);
        rms_backward(mg.dx, br.x_in, b.attn_norm, br.inv1, dx, gb.attn_norm);
    }

    for (std::size_t t = 0; t < T; ++t) {
        auto er = grads.embed.row(static_cast<std::size_t>(record.tokens[t]));
        auto dr = dx.row(t);
        for (std::size_t j = 0; j < er.size(); ++j) er[j] += dr[j];
    }
}

ModelDecoder::ModelDecoder(const Parameters& params, const ModelConfig& config,
                           const PatternAssignment& assignment)
    : params_(&params), config_(config) {
    config.validate();
    caches_.reserve(static_cast<std::size_t>(config.layers));
    for (std::int64_t l = 0; l < config.layers; ++l) {
        const MixConfig mc = mix_config_for_layer(config, assignment, l);
        if (!mc.head_specs.empty()) {
            throw std::runtime_error("decoder: cache requires a uniform pattern across heads");
        }
        caches_.emplace_back(mc.spec, config.rope, config.heads, config.head_dim);
    }
}

std::vector<double> ModelDecoder::step(std::int32_t token) {
    if (token < 0 || token >= config_.vocab) throw std::runtime_error("decoder: token out of range");
    if (pos_ >= config_.context) throw std::runtime_error("decoder: context exhausted");
    const std::size_t dm = static_cast<std::size_t>(config_.model_dim);
    auto er = params_->embed.row(static_cast<std::size_t>(token));
    std::vector<double> x(er.begin(), er.end());

    std::vector<double> normed(dm);
    for (std::size_t l = 0; l < caches_.size(); ++l) {
        const BlockParams& b = params_->blocks[l];
        auto rms_row = [&](const std::vector<double>& in, const Array& w) {
            double ms = 0.0;
            for (double v : in) ms += v * v;
            const double r = 1.0 / std::sqrt(ms / static_cast<double>(dm) + kNormEps);
            for (std::size_t j = 0; j < dm; ++j) normed[j] = in[j] * r * w[j];
        };
        rms_row(x, b.attn_norm);
        std::vector<double> attn = caches_[l].step(normed, b.mix);
        for (std::size_t j = 0; j < dm; ++j) x[j] += attn[j];

        rms_row(x, b.ffn_norm);
        const std::size_t ff = b.w_ffn_gate.dim(1);
        std::vector<double> h(ff, 0.0);
        for (std::size_t j = 0; j < dm; ++j) {
            const double nv = normed[j];
            if (nv == 0.0) continue;
            auto gr = b.w_ffn_gate.row(j);
            for (std::size_t f = 0; f < ff; ++f) h[f] += nv * gr[f];
        }
        std::vector<double> up(ff, 0.0);
        for (std::size_t j = 0; j < dm; ++j) {
            const double nv = normed[j];
            if (nv == 0.0) continue;
            auto ur = b.w_ffn_up.row(j);
            for (std::size_t f = 0; f < ff; ++f) up[f] += nv * ur[f];
        }
        for (std::size_t f = 0; f < ff; ++f) h[f] = silu(h[f]) * up[f];
        for (std::size_t f = 0; f < ff; ++f) {
            const double hv = h[f];
            if (hv == 0.0) continue;
            auto drw = b.w_ffn_down.row(f);
            for (std::size_t j = 0; j < dm; ++j) x[j] += hv * drw[j];
        }
    }

    {
        double ms = 0.0;
        for (double v : x) ms += v * v;
        const double r = 1.0 / std::sqrt(ms / static_cast<double>(dm) + kNormEps);
        for (std::size_t j = 0; j < dm; ++j) normed[j] = x[j] * r * params_->final_norm[j];
    }
    const std::size_t vocab = static_cast<std::size_t>(config_.vocab);
    std::vector<double> logits(vocab, 0.0);
    for (std::size_t j = 0; j < dm; ++j) {
        const double nv = normed[j];
        if (nv == 0.0) continue;
        auto hr = params_->lm_head.row(j);
        for (std::size_t v = 0; v < vocab; ++v) logits[v] += nv * hr[v];
    }
    ensure_finite(logits, "decoder step");
    ++pos_;
    return logits;
}

CacheFootprint ModelDecoder::footprint() const {
    CacheFootprint total;
    for (const DilatedKVCache& c : caches_) {
        const CacheFootprint f = c.footprint();
        total.entries += f.entries;
        total.bytes += f.bytes;
    }
    return total;
}

}  // namespace rmx
