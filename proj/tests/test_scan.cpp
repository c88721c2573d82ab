#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "rmx/rng.hpp"
#include "rmx/scan.hpp"

using namespace rmx;

TEST_SUITE_BEGIN("scan");

namespace {

Array random_array(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Array a(std::move(shape));
    for (auto& v : a.flat()) v = rng.normal(0.0, scale);
    return a;
}

Array random_gates(std::vector<std::size_t> shape, Rng& rng) {
    Array g(std::move(shape));
    for (auto& v : g.flat()) v = rng.uniform();
    return g;
}

}  // namespace

TEST_CASE("sequential scan frozen half-gate values") {
    // g = 0.5, x = 1,1,1: h = 0.5, 0.75, 0.875.
    const Array x = Array::from({3, 1}, {1.0, 1.0, 1.0});
    const Array g({3, 1}, 0.5);
    const Array h = scan::sequential(x, g);
    CHECK(h(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(h(1, 0) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(h(2, 0) == doctest::Approx(0.875).epsilon(1e-15));
}

TEST_CASE("sequential scan matches the definition oracle") {
    Rng rng(21);
    const Array x = random_array({37, 5}, rng);
    const Array g = random_gates({37, 5}, rng);
    const Array init = random_array({5}, rng);
    const Array h = scan::sequential(x, g, init);
    const Array ref = oracles::scan_by_definition(x, g, init);
    CHECK(oracles::max_abs_diff(h, ref) < 1e-13);
}

TEST_CASE("gate extremes: passthrough and hold") {
    Rng rng(22);
    const Array x = random_array({9, 4}, rng);
    Array init = random_array({4}, rng);
    const Array g0({9, 4}, 0.0);
    const Array h0 = scan::sequential(x, g0, init);
    CHECK(oracles::max_abs_diff(h0, x) == 0.0);  // g=0 writes the input through

    const Array g1({9, 4}, 1.0);
    const Array h1 = scan::sequential(x, g1, init);
    for (std::size_t t = 0; t < 9; ++t) {
        CHECK(oracles::max_abs_diff(h1.row(t), init.flat()) == 0.0);  // g=1 holds state
    }
}

TEST_CASE("parallel scan equals sequential across sizes") {
    Rng rng(23);
    for (const std::size_t T : {1u, 2u, 3u, 31u, 64u, 257u}) {
        const Array x = random_array({T, 6}, rng);
        const Array g = random_gates({T, 6}, rng);
        const Array init = random_array({6}, rng);
        const Array hs = scan::sequential(x, g, init);
        const Array hp = scan::parallel(x, g, init);
        CHECK(oracles::max_abs_diff(hs, hp) < 1e-12);
    }
}

TEST_CASE("windowed scan frozen values and oracle agreement") {
    const Array x = Array::from({3, 1}, {1.0, 2.0, 3.0});
    const Array g({3, 1}, 0.5);
    const Array h = scan::overlapped(x, g, 2);
    CHECK(h(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(h(1, 0) == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(h(2, 0) == doctest::Approx(2.0).epsilon(1e-15));

    Rng rng(24);
    const Array xr = random_array({41, 3}, rng);
    const Array gr = random_gates({41, 3}, rng);
    for (const std::int64_t L : {1, 2, 7, 16}) {
        CHECK(oracles::max_abs_diff(scan::overlapped(xr, gr, L),
                                    oracles::scan_window_by_definition(xr, gr, L)) < 1e-13);
    }
}

TEST_CASE("window covering the whole sequence equals the full scan") {
    Rng rng(25);
    const Array x = random_array({19, 4}, rng);
    const Array g = random_gates({19, 4}, rng);
    CHECK(oracles::max_abs_diff(scan::overlapped(x, g, 19), scan::sequential(x, g)) < 1e-13);
    CHECK(oracles::max_abs_diff(scan::overlapped(x, g, 100), scan::sequential(x, g)) < 1e-13);
}

TEST_CASE("state_step chain reproduces the sequential rows") {
    Rng rng(26);
    const Array x = random_array({23, 5}, rng);
    const Array g = random_gates({23, 5}, rng);
    const Array h = scan::sequential(x, g);
    auto state = scan::RecurrenceState::zeros(5);
    for (std::size_t t = 0; t < 23; ++t) {
        scan::state_step(state, x.row(t), g.row(t));
        CHECK(oracles::max_abs_diff(state.h.flat(), h.row(t)) == 0.0);
    }
    CHECK(state.steps == 23);
}

TEST_CASE("scan backward matches finite differences") {
    Rng rng(27);
    const std::size_t T = 7, d = 3;
    const Array x = random_array({T, d}, rng);
    const Array g = random_gates({T, d}, rng);
    const Array init = random_array({d}, rng);
    const Array w = random_array({T, d}, rng);  // loss = sum w * h

    const Array h = scan::sequential(x, g, init);
    const auto grads = scan::backward(w, x, g, h, init);

    auto loss_with = [&](const Array& xx, const Array& gg, const Array& ii) {
        const Array hh = scan::sequential(xx, gg, ii);
        double s = 0.0;
        for (std::size_t i = 0; i < hh.size(); ++i) s += w[i] * hh[i];
        return s;
    };

    auto fd_x = finite_diff_grad(
        [&](std::span<const double> flat) {
            Array xx = x;
            std::copy(flat.begin(), flat.end(), xx.flat().begin());
            return loss_with(xx, g, init);
        },
        x.flat());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(oracles::rel_err(grads.dx[i], fd_x[i]) < 1e-4);
    }
    auto fd_g = finite_diff_grad(
        [&](std::span<const double> flat) {
            Array gg = g;
            std::copy(flat.begin(), flat.end(), gg.flat().begin());
            return loss_with(x, gg, init);
        },
        g.flat());
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(oracles::rel_err(grads.dg[i], fd_g[i]) < 1e-4);
    }
    auto fd_i = finite_diff_grad(
        [&](std::span<const double> flat) {
            Array ii = init;
            std::copy(flat.begin(), flat.end(), ii.flat().begin());
            return loss_with(x, g, ii);
        },
        init.flat());
    for (std::size_t i = 0; i < init.size(); ++i) {
        CHECK(oracles::rel_err(grads.dinit[i], fd_i[i]) < 1e-4);
    }
}

TEST_CASE("windowed scan backward matches finite differences") {
    Rng rng(28);
    const std::size_t T = 9, d = 2;
    const std::int64_t L = 3;
    const Array x = random_array({T, d}, rng);
    const Array g = random_gates({T, d}, rng);
    const Array w = random_array({T, d}, rng);

    const auto grads = scan::backward_overlapped(w, x, g, L);

    auto loss_with = [&](const Array& xx, const Array& gg) {
        const Array hh = scan::overlapped(xx, gg, L);
        double s = 0.0;
        for (std::size_t i = 0; i < hh.size(); ++i) s += w[i] * hh[i];
        return s;
    };
    auto fd_x = finite_diff_grad(
        [&](std::span<const double> flat) {
            Array xx = x;
            std::copy(flat.begin(), flat.end(), xx.flat().begin());
            return loss_with(xx, g);
        },
        x.flat());
    auto fd_g = finite_diff_grad(
        [&](std::span<const double> flat) {
            Array gg = g;
            std::copy(flat.begin(), flat.end(), gg.flat().begin());
            return loss_with(x, gg);
        },
        g.flat());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(oracles::rel_err(grads.dx[i], fd_x[i]) < 1e-4);
        CHECK(oracles::rel_err(grads.dg[i], fd_g[i]) < 1e-4);
    }
    // Zero-init windows leave nothing for the initial state.
    for (std::size_t j = 0; j < d; ++j) CHECK(grads.dinit[j] == 0.0);
}

TEST_CASE("gates_from_input applies the logistic pointwise") {
    Rng rng(29);
    const Array x = random_array({4, 3}, rng);
    scan::GateParams params;
    params.w = random_array({3, 2}, rng);
    const Array g = scan::gates_from_input(x, params);
    const Array z = matmul(x, params.w);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(g[i] == doctest::Approx(1.0 / (1.0 + std::exp(-z[i]))).epsilon(1e-12));
        CHECK(g[i] > 0.0);
        CHECK(g[i] < 1.0);
    }
}

TEST_CASE("scan rejects mismatched shapes") {
    Array x({3, 2}), g({2, 3});
    CHECK_THROWS(scan::sequential(x, g));
    CHECK_THROWS(scan::overlapped(x, x, 0));
}

TEST_SUITE_END();
