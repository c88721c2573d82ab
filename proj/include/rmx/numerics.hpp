#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "rmx/array.hpp"
#include "rmx/rng.hpp"

namespace rmx {

// Rotary position embedding parameters. Pairing is interleaved: dims (2i, 2i+1)
// rotate together with frequency base^(-2i/head_dim). enabled=false keeps
// positions out of the computation entirely.
struct RopeParams {
    bool enabled = true;
    double base = 10000.0;

    double freq(std::size_t pair, std::size_t head_dim) const;
};

// c = a @ b for 2-D arrays. Accumulation over the inner dimension runs
// left-to-right so results are run-to-run identical.
Array matmul(const Array& a, const Array& b);

// c = a @ b^T, i.e. c[i][j] = dot(a.row(i), b.row(j)).
Array matmul_nt(const Array& a, const Array& b);

// c = a^T @ b.
Array matmul_tn(const Array& a, const Array& b);

// In-place numerically stable softmax of a vector (max-subtracted).
void softmax_stable(std::span<double> v);

// y = x / rms(x) * weight, rms(x) = sqrt(mean(x^2) + eps). No bias term.
void rms_norm(std::span<const double> x, std::span<const double> weight,
              std::span<double> out, double eps = 1e-6);

// Rotates each row of x (shape T x head_dim) by its absolute position.
// positions.size() must equal T. No-op when params.enabled is false.
Array rope_apply(const Array& x, std::span<const std::int64_t> positions,
                 const RopeParams& params);

// Rotates a single row at one absolute position.
void rope_apply_row(std::span<double> row, std::int64_t position, const RopeParams& params);

// Inverse rotation of a single row (rotate by -theta); used by backward passes.
void rope_unapply_row(std::span<double> row, std::int64_t position, const RopeParams& params);

// Central finite difference gradient of a scalar function: df/dx_i evaluated
// with step h. The reference oracle for every analytic backward pass here.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h = 1e-5);

double dot(std::span<const double> a, std::span<const double> b);

double silu(double x);

}  // namespace rmx
