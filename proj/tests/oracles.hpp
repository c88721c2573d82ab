#pragma once

// Independent reference implementations used only by tests. These are written
// from the operation definitions, by different means than the library code
// (long-double accumulation, direct formulas, no shared helpers), so that an
// agreement between the two is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "rmx/array.hpp"

namespace oracles {

// Plain triple-loop matmul in long double.
inline rmx::Array matmul_naive(const rmx::Array& a, const rmx::Array& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    rmx::Array c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            long double s = 0.0L;
            for (std::size_t kk = 0; kk < k; ++kk) {
                s += static_cast<long double>(a(i, kk)) * static_cast<long double>(b(kk, j));
            }
            c(i, j) = static_cast<double>(s);
        }
    }
    return c;
}

// h_t = g_t h_{t-1} + (1 - g_t) x_t evaluated in long double, by definition.
inline rmx::Array scan_by_definition(const rmx::Array& x, const rmx::Array& g,
                                     const rmx::Array& init = rmx::Array()) {
    const std::size_t T = x.dim(0), d = x.dim(1);
    rmx::Array h({T, d});
    for (std::size_t j = 0; j < d; ++j) {
        long double carry = init.empty() ? 0.0L : static_cast<long double>(init[j]);
        for (std::size_t t = 0; t < T; ++t) {
            const long double gv = g(t, j);
            carry = gv * carry + (1.0L - gv) * static_cast<long double>(x(t, j));
            h(t, j) = static_cast<double>(carry);
        }
    }
    return h;
}

// Windowed scan by definition: restart from zero at the window start.
inline rmx::Array scan_window_by_definition(const rmx::Array& x, const rmx::Array& g,
                                            std::int64_t window) {
    const std::int64_t T = static_cast<std::int64_t>(x.dim(0));
    const std::size_t d = x.dim(1);
    rmx::Array h({static_cast<std::size_t>(T), d});
    for (std::size_t j = 0; j < d; ++j) {
        for (std::int64_t t = 0; t < T; ++t) {
            long double carry = 0.0L;
            for (std::int64_t u = std::max<std::int64_t>(0, t - window + 1); u <= t; ++u) {
                const long double gv = g(static_cast<std::size_t>(u), j);
                carry = gv * carry +
                        (1.0L - gv) * static_cast<long double>(x(static_cast<std::size_t>(u), j));
            }
            h(static_cast<std::size_t>(t), j) = static_cast<double>(carry);
        }
    }
    return h;
}

// Softmax attention of one query over an explicit position list, long double,
// directly from the definition (no max subtraction, no streaming).
inline std::vector<double> attention_by_definition(std::span<const double> q,
                                                   const rmx::Array& keys,
                                                   const rmx::Array& values,
                                                   const std::vector<std::int64_t>& positions,
                                                   double scale) {
    std::vector<long double> w(positions.size());
    long double z = 0.0L;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        long double dot = 0.0L;
        const auto kr = keys.row(static_cast<std::size_t>(positions[i]));
        for (std::size_t j = 0; j < q.size(); ++j) {
            dot += static_cast<long double>(q[j]) * static_cast<long double>(kr[j]);
        }
        w[i] = std::exp(dot * static_cast<long double>(scale));
        z += w[i];
    }
    std::vector<double> out(q.size(), 0.0);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto vr = values.row(static_cast<std::size_t>(positions[i]));
        for (std::size_t j = 0; j < q.size(); ++j) {
            out[j] += static_cast<double>(w[i] / z * static_cast<long double>(vr[j]));
        }
    }
    return out;
}

// Full causal attention over per-head slices of rotated queries/keys and
// gated values, [T x heads*head_dim] layout. Reference for the dense case.
inline rmx::Array causal_attention_by_definition(const rmx::Array& q_rope,
                                                 const rmx::Array& k_rope,
                                                 const rmx::Array& v_tilde,
                                                 std::int64_t heads) {
    const std::size_t T = q_rope.dim(0);
    const std::size_t gd = q_rope.dim(1);
    const std::size_t hd = gd / static_cast<std::size_t>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    rmx::Array out({T, gd});
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
            std::vector<std::int64_t> positions(t + 1);
            for (std::size_t p = 0; p <= t; ++p) positions[p] = static_cast<std::int64_t>(p);
            rmx::Array keys({T, hd}), values({T, hd});
            for (std::size_t p = 0; p < T; ++p) {
                for (std::size_t j = 0; j < hd; ++j) {
                    keys(p, j) = k_rope(p, h * hd + j);
                    values(p, j) = v_tilde(p, h * hd + j);
                }
            }
            std::vector<double> qh(hd);
            for (std::size_t j = 0; j < hd; ++j) qh[j] = q_rope(t, h * hd + j);
            const auto o = attention_by_definition(qh, keys, values, positions, scale);
            for (std::size_t j = 0; j < hd; ++j) out(t, h * hd + j) = o[j];
        }
    }
    return out;
}

inline double max_abs_diff(const rmx::Array& a, const rmx::Array& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Relative error with an absolute floor, as used by the gradient checks.
inline double rel_err(double got, double want, double floor_ = 1e-8) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor_});
}

}  // namespace oracles
