#include "rmx/scan.hpp"

#include <cmath>
#include <stdexcept>

namespace rmx::scan {

namespace {

void check_xg(const Array& x, const Array& g) {
    if (x.rank() != 2 || !x.same_shape(g)) {
        throw std::runtime_error("scan: x and g must both be [T x d]");
    }
}

void check_init(const Array& init, std::size_t d) {
    if (!init.empty() && (init.rank() != 1 || init.dim(0) != d)) {
        throw std::runtime_error("scan: init must be [d]");
    }
}

}  // namespace

Array gates_from_input(const Array& x, const GateParams& params) {
    Array z = matmul(x, params.w);
    for (double& v : z.flat()) v = 1.0 / (1.0 + std::exp(-v));
    ensure_finite(z, "gates_from_input");
    return z;
}

Array sequential(const Array& x, const Array& g, const Array& init) {
    check_xg(x, g);
    const std::size_t T = x.dim(0), d = x.dim(1);
    check_init(init, d);
    Array h({T, d});
    std::vector<double> carry(d, 0.0);
    if (!init.empty()) carry.assign(init.data(), init.data() + d);
    for (std::size_t t = 0; t < T; ++t) {
        auto xr = x.row(t);
        auto gr = g.row(t);
        auto hr = h.row(t);
        for (std::size_t j = 0; j < d; ++j) {
            carry[j] = gr[j] * carry[j] + (1.0 - gr[j]) * xr[j];
            hr[j] = carry[j];
        }
    }
    ensure_finite(h, "scan::sequential");
    return h;
}

namespace {

// In-place inclusive prefix composition of affine maps (a, b) over [lo, hi):
// after the call, (a[t], b[t]) composes steps lo..t. Balanced recursion depth.
void compose_tree(double* a, double* b, std::size_t d, std::size_t lo, std::size_t hi) {
    if (hi - lo <= 1) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    compose_tree(a, b, d, lo, mid);
    compose_tree(a, b, d, mid, hi);
    const double* am = a + (mid - 1) * d;
    const double* bm = b + (mid - 1) * d;
    for (std::size_t t = mid; t < hi; ++t) {
        double* at = a + t * d;
        double* bt = b + t * d;
        for (std::size_t j = 0; j < d; ++j) {
            bt[j] = at[j] * bm[j] + bt[j];
            at[j] = at[j] * am[j];
        }
    }
}

}  // namespace

Array parallel(const Array& x, const Array& g, const Array& init) {
    check_xg(x, g);
    const std::size_t T = x.dim(0), d = x.dim(1);
    check_init(init, d);
    if (T == 0) return Array({0, d});
    // Leaf maps: h -> a*h + b with a = g_t, b = (1-g_t)*x_t.
    std::vector<double> a(g.data(), g.data() + T * d);
    std::vector<double> b(T * d);
    for (std::size_t i = 0; i < T * d; ++i) b[i] = (1.0 - a[i]) * x.data()[i];
    compose_tree(a.data(), b.data(), d, 0, T);
    Array h({T, d});
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            const double h0 = init.empty() ? 0.0 : init[j];
            h(t, j) = a[t * d + j] * h0 + b[t * d + j];
        }
    }
    ensure_finite(h, "scan::parallel");
    return h;
}

Array overlapped(const Array& x, const Array& g, std::int64_t window) {
    check_xg(x, g);
    if (window < 1) throw std::runtime_error("scan::overlapped: window must be >= 1");
    const std::int64_t T = static_cast<std::int64_t>(x.dim(0));
    const std::size_t d = x.dim(1);
    Array h({static_cast<std::size_t>(T), d});
    std::vector<double> carry(d);
    for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t start = std::max<std::int64_t>(0, t - window + 1);
        carry.assign(d, 0.0);
        for (std::int64_t u = start; u <= t; ++u) {
            auto xr = x.row(static_cast<std::size_t>(u));
            auto gr = g.row(static_cast<std::size_t>(u));
            for (std::size_t j = 0; j < d; ++j) {
                carry[j] = gr[j] * carry[j] + (1.0 - gr[j]) * xr[j];
            }
        }
        auto hr = h.row(static_cast<std::size_t>(t));
        for (std::size_t j = 0; j < d; ++j) hr[j] = carry[j];
    }
    ensure_finite(h, "scan::overlapped");
    return h;
}

void state_step(RecurrenceState& state, std::span<const double> x, std::span<const double> g) {
    if (state.h.rank() != 1 || state.h.dim(0) != x.size() || x.size() != g.size()) {
        throw std::runtime_error("state_step: mismatched sizes");
    }
    for (std::size_t j = 0; j < x.size(); ++j) {
        state.h[j] = g[j] * state.h[j] + (1.0 - g[j]) * x[j];
    }
    state.steps += 1;
}

ScanGrads backward(const Array& grad_h, const Array& x, const Array& g, const Array& h,
                   const Array& init) {
    check_xg(x, g);
    if (!grad_h.same_shape(x) || !h.same_shape(x)) {
        throw std::runtime_error("scan::backward: mismatched shapes");
    }
    const std::size_t T = x.dim(0), d = x.dim(1);
    check_init(init, d);
    ScanGrads out;
    out.dx = Array({T, d});
    out.dg = Array({T, d});
    out.dinit = Array({d});
    std::vector<double> carry(d, 0.0);  // dL/dh_t accumulated from t+1..T-1
    for (std::size_t ti = T; ti-- > 0;) {
        auto gr = g.row(ti);
        auto xr = x.row(ti);
        auto ghr = grad_h.row(ti);
        for (std::size_t j = 0; j < d; ++j) {
            const double dh = ghr[j] + carry[j];
            const double h_prev = ti > 0 ? h(ti - 1, j) : (init.empty() ? 0.0 : init[j]);
            out.dg(ti, j) = dh * (h_prev - xr[j]);
            out.dx(ti, j) = dh * (1.0 - gr[j]);
            carry[j] = dh * gr[j];
        }
    }
    for (std::size_t j = 0; j < d; ++j) out.dinit[j] = carry[j];
    return out;
}

ScanGrads backward_overlapped(const Array& grad_h, const Array& x, const Array& g,
                              std::int64_t window) {
    check_xg(x, g);
    if (!grad_h.same_shape(x)) throw std::runtime_error("scan::backward_overlapped: shapes");
    if (window < 1) throw std::runtime_error("scan::backward_overlapped: window must be >= 1");
    const std::int64_t T = static_cast<std::int64_t>(x.dim(0));
    const std::size_t d = x.dim(1);
    ScanGrads out;
    out.dx = Array({static_cast<std::size_t>(T), d});
    out.dg = Array({static_cast<std::size_t>(T), d});
    out.dinit = Array({d});
    // Each output h_t depends only on its own window; replay it forward, then
    // walk the carry chain backward.
    std::vector<double> hw(static_cast<std::size_t>(window) * d);
    std::vector<double> carry(d);
    for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t start = std::max<std::int64_t>(0, t - window + 1);
        const std::size_t n = static_cast<std::size_t>(t - start + 1);
        carry.assign(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto xr = x.row(static_cast<std::size_t>(start) + i);
            auto gr = g.row(static_cast<std::size_t>(start) + i);
            for (std::size_t j = 0; j < d; ++j) {
                carry[j] = gr[j] * carry[j] + (1.0 - gr[j]) * xr[j];
                hw[i * d + j] = carry[j];
            }
        }
        carry.assign(grad_h.row(static_cast<std::size_t>(t)).begin(),
                     grad_h.row(static_cast<std::size_t>(t)).end());
        for (std::size_t i = n; i-- > 0;) {
            const std::size_t u = static_cast<std::size_t>(start) + i;
            auto gr = g.row(u);
            auto xr = x.row(u);
            for (std::size_t j = 0; j < d; ++j) {
                const double h_prev = i > 0 ? hw[(i - 1) * d + j] : 0.0;
                out.dg(u, j) += carry[j] * (h_prev - xr[j]);
                out.dx(u, j) += carry[j] * (1.0 - gr[j]);
                carry[j] *= gr[j];
            }
        }
    }
    return out;
}

}  // namespace rmx::scan
