#include "rmx/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace rmx {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_params(const MixParams& p) {
    const std::size_t gd = static_cast<std::size_t>(p.heads * p.head_dim);
    if (p.head_dim <= 0 || p.heads <= 0 || p.head_dim % 2 != 0) {
        throw std::runtime_error("mix: heads and head_dim must be positive, head_dim even");
    }
    for (const Array* w : {&p.wq, &p.wk, &p.wv, &p.gate.w, &p.ogate.w}) {
        if (w->rank() != 2 || w->dim(1) != gd) {
            throw std::runtime_error("mix: projection shape mismatch");
        }
    }
    if (p.wout.rank() != 2 || p.wout.dim(0) != gd) {
        throw std::runtime_error("mix: wout shape mismatch");
    }
}

}  // namespace

void MixConfig::validate(std::int64_t heads) const {
    spec.validate();
    if (head_specs.empty()) return;
    if (static_cast<std::int64_t>(head_specs.size()) != heads) {
        throw std::runtime_error("mix: head_specs size must equal heads");
    }
    for (const SparsePatternSpec& s : head_specs) {
        s.validate();
        if (s.recurrence_window != head_specs.front().recurrence_window) {
            throw std::runtime_error(
                "mix: all heads of a layer must share one recurrence window");
        }
    }
}

std::vector<double> attend_oracle(std::span<const double> q, const Array& keys,
                                  const Array& values, const AttendedSet& attended,
                                  double scale) {
    if (attended.empty()) throw std::runtime_error("attend_oracle: empty attended set");
    const std::size_t d = q.size();
    std::vector<double> logits(attended.size());
    for (std::size_t i = 0; i < attended.size(); ++i) {
        const auto p = static_cast<std::size_t>(attended[i].pos);
        logits[i] = dot(q, keys.row(p)) * scale;
    }
    softmax_stable(logits);
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < attended.size(); ++i) {
        const auto vr = values.row(static_cast<std::size_t>(attended[i].pos));
        for (std::size_t j = 0; j < d; ++j) out[j] += logits[i] * vr[j];
    }
    ensure_finite(out, "attend_oracle");
    return out;
}

void attend_online_ptrs(std::span<const double> q, std::span<const AttnSegment> segments,
                        double scale, std::span<double> out) {
    const std::size_t d = q.size();
    double m = -std::numeric_limits<double>::infinity();
    double s = 0.0;
    std::vector<double> acc(d, 0.0);
    std::vector<double> logits;
    std::size_t total = 0;
    for (const AttnSegment& seg : segments) {
        if (seg.keys.size() != seg.values.size()) {
            throw std::runtime_error("attend_online: segment key/value length mismatch");
        }
        if (seg.keys.empty()) continue;
        total += seg.keys.size();
        logits.resize(seg.keys.size());
        double m_seg = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < seg.keys.size(); ++i) {
            logits[i] = dot(q, std::span<const double>(seg.keys[i], d)) * scale;
            m_seg = std::max(m_seg, logits[i]);
        }
        const double m_new = std::max(m, m_seg);
        const double rescale = (s > 0.0) ? std::exp(m - m_new) : 0.0;
        s *= rescale;
        for (double& a : acc) a *= rescale;
        for (std::size_t i = 0; i < seg.keys.size(); ++i) {
            const double w = std::exp(logits[i] - m_new);
            s += w;
            const double* vr = seg.values[i];
            for (std::size_t j = 0; j < d; ++j) acc[j] += w * vr[j];
        }
        m = m_new;
    }
    if (total == 0) throw std::runtime_error("attend_online: no attended entries");
    for (std::size_t j = 0; j < d; ++j) out[j] = acc[j] / s;
    ensure_finite(out, "attend_online");
}

std::vector<double> attend_online(std::span<const double> q, const Array& keys,
                                  const Array& values,
                                  std::span<const AttendedSet> segments, double scale) {
    // Segments must partition the attended set: a position may appear once.
    std::set<std::int64_t> seen;
    std::vector<AttnSegment> ptr_segments;
    ptr_segments.reserve(segments.size());
    for (const AttendedSet& seg : segments) {
        AttnSegment ps;
        for (const AttendedEntry& e : seg) {
            if (!seen.insert(e.pos).second) {
                throw std::runtime_error("attend_online: position repeated across segments");
            }
            ps.keys.push_back(keys.row(static_cast<std::size_t>(e.pos)).data());
            ps.values.push_back(values.row(static_cast<std::size_t>(e.pos)).data());
        }
        ptr_segments.push_back(std::move(ps));
    }
    std::vector<double> out(q.size());
    attend_online_ptrs(q, ptr_segments, scale, out);
    return out;
}

namespace {

// Splits one attended set into per-label segments in merge order.
std::vector<AttendedSet> label_segments(const AttendedSet& attended) {
    static constexpr EntryLabel order[] = {EntryLabel::Sink, EntryLabel::BlockSummary,
                                           EntryLabel::TopkBlock, EntryLabel::Local,
                                           EntryLabel::Self};
    std::vector<AttendedSet> segments;
    for (EntryLabel label : order) {
        AttendedSet seg;
        for (const AttendedEntry& e : attended) {
            if (e.label == label) seg.push_back(e);
        }
        if (!seg.empty()) segments.push_back(std::move(seg));
    }
    return segments;
}

}  // namespace

Array temporal_mixing_forward(const Array& x, const MixParams& params, const MixConfig& config,
                              MixRecord* record, const MixOverrides* overrides) {
    check_params(params);
    config.validate(params.heads);
    if (x.rank() != 2 || x.dim(0) == 0) throw std::runtime_error("mix: x must be [T x model_dim]");
    const std::size_t T = x.dim(0);
    const std::size_t H = static_cast<std::size_t>(params.heads);
    const std::size_t hd = static_cast<std::size_t>(params.head_dim);
    const std::size_t gd = H * hd;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Array q = matmul(x, params.wq);
    Array k = matmul(x, params.wk);
    Array v = matmul(x, params.wv);
    Array g;
    bool gates_forced = false;
    if (overrides != nullptr && overrides->forced_gates != nullptr) {
        if (!overrides->forced_gates->same_shape(k)) {
            throw std::runtime_error("mix: forced gates must be [T x heads*head_dim]");
        }
        g = *overrides->forced_gates;
        gates_forced = true;
    } else {
        g = scan::gates_from_input(x, params.gate);
    }

    Array k_tilde, v_tilde;
    const auto recurrence_window = config.spec_for(0).recurrence_window;
    if (recurrence_window) {
        k_tilde = scan::overlapped(k, g, *recurrence_window);
        v_tilde = scan::overlapped(v, g, *recurrence_window);
    } else {
        k_tilde = scan::parallel(k, g);
        v_tilde = scan::parallel(v, g);
    }

    // Rotation happens after the recurrence, per head, at absolute positions.
    Array q_rope = q;
    Array k_rope = k_tilde;
    if (config.rope.enabled) {
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t h = 0; h < H; ++h) {
                rope_apply_row(q_rope.row(t).subspan(h * hd, hd), static_cast<std::int64_t>(t),
                               config.rope);
                rope_apply_row(k_rope.row(t).subspan(h * hd, hd), static_cast<std::int64_t>(t),
                               config.rope);
            }
        }
    }

    // Per-head block stats for top-k scoring, over the rotated gated keys.
    std::vector<BlockStats> stats;
    std::vector<Array> head_keys(H), head_values(H);
    for (std::size_t h = 0; h < H; ++h) {
        head_keys[h] = Array({T, hd});
        head_values[h] = Array({T, hd});
        for (std::size_t t = 0; t < T; ++t) {
            auto kr = k_rope.row(t).subspan(h * hd, hd);
            auto vr = v_tilde.row(t).subspan(h * hd, hd);
            std::copy(kr.begin(), kr.end(), head_keys[h].row(t).begin());
            std::copy(vr.begin(), vr.end(), head_values[h].row(t).begin());
        }
    }
    stats.resize(H);
    for (std::size_t h = 0; h < H; ++h) {
        const SparsePatternSpec& hs = config.spec_for(static_cast<std::int64_t>(h));
        if (hs.topk) stats[h] = block_key_stats(head_keys[h], hs.topk->block_size);
    }

    const bool ogate_open = overrides != nullptr && overrides->open_output_gate;
    Array og({T, gd}, 1.0);
    if (!ogate_open) {
        og = matmul(x, params.ogate.w);
        for (double& z : og.flat()) z = sigmoid(z);
    }

    Array attn({T, gd});
    const bool tape = record != nullptr && record->tape_attention;
    if (tape) {
        record->attended.assign(T, std::vector<AttendedSet>(H));
        record->probs.assign(T, std::vector<std::vector<double>>(H));
    }
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t h = 0; h < H; ++h) {
            const SparsePatternSpec& hs = config.spec_for(static_cast<std::int64_t>(h));
            auto qh = q_rope.row(t).subspan(h * hd, hd);
            AttendedSet attended = attended_for_query(
                static_cast<std::int64_t>(t), hs, qh, hs.topk ? &stats[h] : nullptr);
            const auto segments = label_segments(attended);
            auto out = attend_online(qh, head_keys[h], head_values[h], segments, scale);
            std::copy(out.begin(), out.end(), attn.row(t).begin() + h * hd);
            if (tape) {
                // Recompute probabilities once for the tape; decode-grade code
                // paths never pay this cost.
                std::vector<double> logits(attended.size());
                for (std::size_t i = 0; i < attended.size(); ++i) {
                    logits[i] = dot(qh, head_keys[h].row(static_cast<std::size_t>(attended[i].pos))) * scale;
                }
                softmax_stable(logits);
                record->attended[t][h] = std::move(attended);
                record->probs[t][h] = std::move(logits);
            }
        }
    }

    Array gated({T, gd});
    for (std::size_t i = 0; i < gated.size(); ++i) gated[i] = og[i] * attn[i];
    Array y = matmul(gated, params.wout);
    ensure_finite(y, "temporal_mixing_forward");

    if (record != nullptr) {
        record->x = x;
        record->k = std::move(k);
        record->v = std::move(v);
        record->g = std::move(g);
        record->k_tilde = std::move(k_tilde);
        record->v_tilde = std::move(v_tilde);
        record->q_rope = std::move(q_rope);
        record->k_rope = std::move(k_rope);
        record->og = std::move(og);
        record->attn = std::move(attn);
        record->gates_forced = gates_forced;
        record->ogate_open = ogate_open;
    }
    return y;
}

MixGrads temporal_mixing_backward(const Array& grad_y, const MixRecord& record,
                                  const MixParams& params, const MixConfig& config) {
    check_params(params);
    const std::size_t T = record.x.dim(0);
    const std::size_t H = static_cast<std::size_t>(params.heads);
    const std::size_t hd = static_cast<std::size_t>(params.head_dim);
    const std::size_t gd = H * hd;
    if (grad_y.rank() != 2 || grad_y.dim(0) != T) {
        throw std::runtime_error("mix backward: grad shape mismatch");
    }
    if (!record.tape_attention) {
        throw std::runtime_error("mix backward: record was taken without the attention tape");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    MixGrads grads;
    grads.dx = Array({T, record.x.dim(1)});

    // Output projection and output gate.
    Array gated({T, gd});
    for (std::size_t i = 0; i < gated.size(); ++i) gated[i] = record.og[i] * record.attn[i];
    grads.dwout = matmul_tn(gated, grad_y);
    Array dgated = matmul_nt(grad_y, params.wout);

    Array dattn({T, gd});
    Array dzog({T, gd});
    for (std::size_t i = 0; i < dattn.size(); ++i) {
        dattn[i] = dgated[i] * record.og[i];
        if (!record.ogate_open) {
            const double dog = dgated[i] * record.attn[i];
            dzog[i] = dog * record.og[i] * (1.0 - record.og[i]);
        }
    }
    grads.dwog = matmul_tn(record.x, dzog);
    {
        Array dx_og = matmul_nt(dzog, params.ogate.w);
        for (std::size_t i = 0; i < grads.dx.size(); ++i) grads.dx[i] += dx_og[i];
    }

    // Attention: scatter into rotated query/key and value gradients.
    Array dq_rope({T, gd});
    Array dk_rope({T, gd});
    Array dv_tilde({T, gd});
    std::vector<double> dout(hd), qh(hd);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t h = 0; h < H; ++h) {
            const AttendedSet& attended = record.attended[t][h];
            const std::vector<double>& probs = record.probs[t][h];
            auto dar = dattn.row(t).subspan(h * hd, hd);
            std::copy(dar.begin(), dar.end(), dout.begin());
            auto qr = record.q_rope.row(t).subspan(h * hd, hd);
            std::copy(qr.begin(), qr.end(), qh.begin());
            // dlogit_i = p_i (dout.v_i - sum_j p_j dout.v_j)
            double mix = 0.0;
            std::vector<double> dv_dot(attended.size());
            for (std::size_t i = 0; i < attended.size(); ++i) {
                const auto p = static_cast<std::size_t>(attended[i].pos);
                auto vr = record.v_tilde.row(p).subspan(h * hd, hd);
                dv_dot[i] = dot(dout, vr);
                mix += probs[i] * dv_dot[i];
            }
            for (std::size_t i = 0; i < attended.size(); ++i) {
                const auto p = static_cast<std::size_t>(attended[i].pos);
                const double dlogit = probs[i] * (dv_dot[i] - mix);
                auto kr = record.k_rope.row(p).subspan(h * hd, hd);
                auto dqr = dq_rope.row(t).subspan(h * hd, hd);
                auto dkr = dk_rope.row(p).subspan(h * hd, hd);
                auto dvr = dv_tilde.row(p).subspan(h * hd, hd);
                for (std::size_t j = 0; j < hd; ++j) {
                    dqr[j] += dlogit * scale * kr[j];
                    dkr[j] += dlogit * scale * qh[j];
                    dvr[j] += probs[i] * dout[j];
                }
            }
        }
    }

    // Undo the rotation: grad wrt pre-rope vectors is the inverse rotation.
    Array dq = dq_rope;
    Array dk_tilde = dk_rope;
    if (config.rope.enabled) {
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t h = 0; h < H; ++h) {
                rope_unapply_row(dq.row(t).subspan(h * hd, hd), static_cast<std::int64_t>(t),
                                 config.rope);
                rope_unapply_row(dk_tilde.row(t).subspan(h * hd, hd),
                                 static_cast<std::int64_t>(t), config.rope);
            }
        }
    }

    // Through the shared-gate recurrences.
    scan::ScanGrads gk, gv;
    const auto recurrence_window = config.spec_for(0).recurrence_window;
    if (recurrence_window) {
        gk = scan::backward_overlapped(dk_tilde, record.k, record.g, *recurrence_window);
        gv = scan::backward_overlapped(dv_tilde, record.v, record.g, *recurrence_window);
    } else {
        gk = scan::backward(dk_tilde, record.k, record.g, record.k_tilde);
        gv = scan::backward(dv_tilde, record.v, record.g, record.v_tilde);
    }

    Array dzg({T, gd});
    if (!record.gates_forced) {
        for (std::size_t i = 0; i < dzg.size(); ++i) {
            const double dg = gk.dg[i] + gv.dg[i];
            dzg[i] = dg * record.g[i] * (1.0 - record.g[i]);
        }
    }
    grads.dwg = matmul_tn(record.x, dzg);
    {
        Array dx_g = matmul_nt(dzg, params.gate.w);
        for (std::size_t i = 0; i < grads.dx.size(); ++i) grads.dx[i] += dx_g[i];
    }

    grads.dwq = matmul_tn(record.x, dq);
    grads.dwk = matmul_tn(record.x, gk.dx);
    grads.dwv = matmul_tn(record.x, gv.dx);
    {
        Array dx_q = matmul_nt(dq, params.wq);
        Array dx_k = matmul_nt(gk.dx, params.wk);
        Array dx_v = matmul_nt(gv.dx, params.wv);
        for (std::size_t i = 0; i < grads.dx.size(); ++i) {
            grads.dx[i] += dx_q[i] + dx_k[i] + dx_v[i];
        }
    }
    return grads;
}

}  // namespace rmx
