#pragma once

#include <cstdint>
#include <vector>

#include "rmx/array.hpp"
#include "rmx/numerics.hpp"
#include "rmx/pattern.hpp"
#include "rmx/scan.hpp"

namespace rmx {

// Output gating: heads are modulated by sigmoid(x @ w) before the output
// projection. Bias-free like every projection in the layer.
struct OutputGateParams {
    Array w;  // [model_dim x heads*head_dim]
};

// One temporal mixing layer. Keys and values are passed through the shared
// input-gated recurrence before attention; queries are not.
struct MixParams {
    Array wq, wk, wv;         // [model_dim x heads*head_dim]
    scan::GateParams gate;    // recurrence gate projection
    OutputGateParams ogate;   // output gate projection
    Array wout;               // [heads*head_dim x model_dim]
    std::int64_t heads = 1;
    std::int64_t head_dim = 0;
};

struct MixConfig {
    SparsePatternSpec spec;
    // Optional per-head override (size == heads). All heads of a layer must
    // share one recurrence window; attended-set shape may differ per head.
    std::vector<SparsePatternSpec> head_specs;
    RopeParams rope;

    const SparsePatternSpec& spec_for(std::int64_t head) const {
        return head_specs.empty() ? spec : head_specs[static_cast<std::size_t>(head)];
    }
    void validate(std::int64_t heads) const;
};

// Test hooks: pin the recurrence gates to given values and/or hold the output
// gate fully open. Production paths leave this at defaults.
struct MixOverrides {
    const Array* forced_gates = nullptr;  // [T x heads*head_dim]
    bool open_output_gate = false;
};

// Single-pass reference attention for one query over one head's timeline.
// keys/values are [T x head_dim]; only positions in `attended` participate.
std::vector<double> attend_oracle(std::span<const double> q, const Array& keys,
                                  const Array& values, const AttendedSet& attended,
                                  double scale);

// Streaming attention over disjoint segments with online softmax merging
// (running max, normalizer, and numerator). Must agree with attend_oracle on
// the union of the segments.
std::vector<double> attend_online(std::span<const double> q, const Array& keys,
                                  const Array& values,
                                  std::span<const AttendedSet> segments, double scale);

// Pointer-based core used by both prefill and the decode cache: segment i
// holds parallel lists of key/value row pointers (head_dim each).
struct AttnSegment {
    std::vector<const double*> keys;
    std::vector<const double*> values;
};

void attend_online_ptrs(std::span<const double> q, std::span<const AttnSegment> segments,
                        double scale, std::span<double> out);

// Forward intermediates kept for the manual backward pass. Attention
// probabilities and the attended sets are frozen here, so top-k selection is
// treated as constant by the backward pass.
struct MixRecord {
    Array x;                   // [T x model_dim]
    Array k, v;                // pre-recurrence projections [T x heads*head_dim]
    Array g;                   // recurrence gates
    Array k_tilde, v_tilde;    // post-recurrence, pre-rotation
    Array q_rope, k_rope;      // rotated query / gated key
    Array og;                  // output gates
    Array attn;                // per-head attention outputs [T x heads*head_dim]
    std::vector<std::vector<AttendedSet>> attended;        // [T][heads]
    std::vector<std::vector<std::vector<double>>> probs;   // [T][heads][entry]
    bool gates_forced = false;
    bool ogate_open = false;
    // Set false before the forward pass to skip the attended/probs tape when
    // only the projection rows are wanted (prefill); backward then refuses.
    bool tape_attention = true;
};

// y[t] = (sigmoid(x @ w_og) * attn(x))[t] @ w_out with the attended set taken
// from config.spec at every position. x is the layer input, [T x model_dim].
Array temporal_mixing_forward(const Array& x, const MixParams& params, const MixConfig& config,
                              MixRecord* record = nullptr,
                              const MixOverrides* overrides = nullptr);

struct MixGrads {
    Array dx;
    Array dwq, dwk, dwv, dwg, dwog, dwout;
};

MixGrads temporal_mixing_backward(const Array& grad_y, const MixRecord& record,
                                  const MixParams& params, const MixConfig& config);

}  // namespace rmx
