#pragma once

#include <cstdint>
#include <optional>

#include "rmx/array.hpp"
#include "rmx/numerics.hpp"

namespace rmx::scan {

// Input gating parameters: gate g_t = sigmoid(x_t @ w), no bias. The gate is
// shared between the key and value recurrences of a mixing layer.
struct GateParams {
    Array w;  // [in_dim x out_dim]
};

// Per-channel gates for a whole sequence: sigmoid(x @ w), shape [T x out_dim].
Array gates_from_input(const Array& x, const GateParams& params);

// h_t = g_t * h_{t-1} + (1 - g_t) * x_t, elementwise over [T x d].
// init supplies h_{-1} (zeros when empty).
Array sequential(const Array& x, const Array& g, const Array& init = Array());

// Same recurrence evaluated as a balanced-tree composition of the per-step
// affine maps h -> g*h + (1-g)*x. Work O(T log T); the combination order is
// fixed, so results are run-to-run identical (but not bitwise equal to the
// sequential order).
Array parallel(const Array& x, const Array& g, const Array& init = Array());

// Windowed variant: h_t is the result of running the recurrence from a zero
// state over positions [max(0, t-L+1), t] only.
Array overlapped(const Array& x, const Array& g, std::int64_t window);

// Streaming state for decode: one absorbed step at a time.
struct RecurrenceState {
    Array h;                 // [d]
    std::int64_t steps = 0;  // tokens absorbed

    static RecurrenceState zeros(std::size_t d) {
        RecurrenceState s;
        s.h = Array({d});
        return s;
    }
};

// Absorbs one token: h = g*h + (1-g)*x.
void state_step(RecurrenceState& state, std::span<const double> x, std::span<const double> g);

struct ScanGrads {
    Array dx;     // [T x d]
    Array dg;     // [T x d]
    Array dinit;  // [d]
};

// Reverse-mode gradients of the full-sequence recurrence given upstream
// gradients on every h_t. h is the forward output, x/g/init the forward inputs.
ScanGrads backward(const Array& grad_h, const Array& x, const Array& g, const Array& h,
                   const Array& init = Array());

// Reverse-mode gradients of the windowed recurrence. Each window is re-run
// forward internally, so no forward intermediates are needed.
ScanGrads backward_overlapped(const Array& grad_h, const Array& x, const Array& g,
                              std::int64_t window);

}  // namespace rmx::scan
