#include "rmx/numerics.hpp"

#include <cmath>
#include <stdexcept>

namespace rmx {

void ensure_finite(std::span<const double> v, const std::string& what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(what + ": non-finite value");
        }
    }
}

void ensure_finite(const Array& a, const std::string& what) {
    ensure_finite(a.flat(), what);
}

double RopeParams::freq(std::size_t pair, std::size_t head_dim) const {
    return std::pow(base, -2.0 * static_cast<double>(pair) / static_cast<double>(head_dim));
}

Array matmul(const Array& a, const Array& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw std::runtime_error("matmul: incompatible shapes");
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Array c({m, n});
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ap[i * k + kk];
            const double* brow = bp + kk * n;
            double* crow = cp + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Array matmul_nt(const Array& a, const Array& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw std::runtime_error("matmul_nt: incompatible shapes");
    }
    const std::size_t m = a.dim(0), n = b.dim(0);
    Array c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            c(i, j) = dot(a.row(i), b.row(j));
        }
    }
    return c;
}

Array matmul_tn(const Array& a, const Array& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw std::runtime_error("matmul_tn: incompatible shapes");
    }
    const std::size_t m = a.dim(1), k = a.dim(0), n = b.dim(1);
    Array c({m, n});
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = ap + kk * m;
        const double* brow = bp + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = cp + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

void softmax_stable(std::span<double> v) {
    if (v.empty()) throw std::runtime_error("softmax_stable: empty input");
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        s += x;
    }
    for (double& x : v) x /= s;
}

void rms_norm(std::span<const double> x, std::span<const double> weight,
              std::span<double> out, double eps) {
    if (x.size() != weight.size() || x.size() != out.size()) {
        throw std::runtime_error("rms_norm: mismatched sizes");
    }
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(ms + eps);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * weight[i];
}

void rope_apply_row(std::span<double> row, std::int64_t position, const RopeParams& params) {
    if (!params.enabled) return;
    if (row.size() % 2 != 0) throw std::runtime_error("rope: head_dim must be even");
    const std::size_t pairs = row.size() / 2;
    for (std::size_t p = 0; p < pairs; ++p) {
        const double theta = static_cast<double>(position) * params.freq(p, row.size());
        const double c = std::cos(theta), s = std::sin(theta);
        const double x0 = row[2 * p], x1 = row[2 * p + 1];
        row[2 * p] = x0 * c - x1 * s;
        row[2 * p + 1] = x0 * s + x1 * c;
    }
}

void rope_unapply_row(std::span<double> row, std::int64_t position, const RopeParams& params) {
    if (!params.enabled) return;
    const std::size_t pairs = row.size() / 2;
    for (std::size_t p = 0; p < pairs; ++p) {
        const double theta = static_cast<double>(position) * params.freq(p, row.size());
        const double c = std::cos(theta), s = std::sin(theta);
        const double x0 = row[2 * p], x1 = row[2 * p + 1];
        row[2 * p] = x0 * c + x1 * s;
        row[2 * p + 1] = -x0 * s + x1 * c;
    }
}

Array rope_apply(const Array& x, std::span<const std::int64_t> positions,
                 const RopeParams& params) {
    if (x.rank() != 2 || x.dim(0) != positions.size()) {
        throw std::runtime_error("rope_apply: expected [T x head_dim] with T positions");
    }
    Array out = x;
    for (std::size_t t = 0; t < positions.size(); ++t) {
        rope_apply_row(out.row(t), positions[t], params);
    }
    ensure_finite(out, "rope_apply");
    return out;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h) {
    std::vector<double> xs(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double keep = xs[i];
        xs[i] = keep + h;
        const double up = f(xs);
        xs[i] = keep - h;
        const double down = f(xs);
        xs[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

}  // namespace rmx
