#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmx/array.hpp"
#include "rmx/attention.hpp"
#include "rmx/kv_cache.hpp"
#include "rmx/numerics.hpp"
#include "rmx/pattern.hpp"
#include "rmx/rng.hpp"

#include "json.hpp"

namespace rmx {

// Decoder-only language model: pre-norm residual blocks, each a gated
// temporal-mixing attention sublayer followed by a gated-linear FFN.
// No biases anywhere; the unembedding is untied from the embedding.
struct ModelConfig {
    std::int64_t vocab = 256;
    std::int64_t model_dim = 64;
    std::int64_t layers = 2;
    std::int64_t heads = 2;
    std::int64_t head_dim = 32;
    std::int64_t ffn_dim = 0;  // 0 resolves to round(8/3 * model_dim)
    std::int64_t context = 256;
    RopeParams rope;

    std::int64_t resolved_ffn_dim() const;
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

struct BlockParams {
    Array attn_norm;  // [model_dim]
    MixParams mix;
    Array ffn_norm;    // [model_dim]
    Array w_ffn_gate;  // [model_dim x ffn_dim]
    Array w_ffn_up;    // [model_dim x ffn_dim]
    Array w_ffn_down;  // [ffn_dim x model_dim]
};

struct Parameters {
    Array embed;  // [vocab x model_dim]
    std::vector<BlockParams> blocks;
    Array final_norm;  // [model_dim]
    Array lm_head;     // [model_dim x vocab]

    // Visits every tensor with a stable dotted name, e.g. "blocks.1.wq".
    // The same order is used by the optimizer and the checkpoint format.
    void visit(const std::function<void(const std::string&, Array&)>& fn);
    void visit(const std::function<void(const std::string&, const Array&)>& fn) const;

    Parameters zeros_like() const;
    std::int64_t count() const;

    // Matrices drawn from N(0, 0.02^2); norm weights start at one.
    static Parameters init(const ModelConfig& config, Rng& rng);
};

// Per-sequence activation tape captured by forward_lm for the backward pass.
struct BlockRecord {
    Array x_in;      // [T x dm] residual stream entering the block
    Array normed1;   // [T x dm]
    std::vector<double> inv1;  // [T] inverse rms of x_in rows
    MixRecord mix;
    Array x_mid;     // [T x dm] after the attention residual add
    Array normed2;   // [T x dm]
    std::vector<double> inv2;
    Array ffn_a;  // [T x ffn] pre-activation of the gate branch
    Array ffn_b;  // [T x ffn] up branch
    Array ffn_h;  // [T x ffn] silu(a) * b
};

struct LmRecord {
    std::vector<std::int32_t> tokens;
    std::vector<BlockRecord> blocks;
    Array x_final;   // [T x dm]
    Array normed_f;  // [T x dm]
    std::vector<double> inv_f;
    Array logits;  // [T x vocab]
};

// Resolves the per-layer mixing config from a pattern assignment. The head
// override vector is populated only when heads of that layer actually differ.
MixConfig mix_config_for_layer(const ModelConfig& config, const PatternAssignment& assignment,
                               std::int64_t layer);

Array forward_lm(const Parameters& params, const ModelConfig& config,
                 std::span<const std::int32_t> tokens, const PatternAssignment& assignment,
                 LmRecord* record = nullptr);

// Mean next-token negative log likelihood over positions 0..T-2.
double lm_loss(const Array& logits, std::span<const std::int32_t> tokens);

// Full parameter gradient of lm_loss(forward_lm(...)). `grads` is accumulated
// into, so callers average over a batch by reusing one zeros_like buffer.
void backward_lm(const Parameters& params, const ModelConfig& config, const LmRecord& record,
                 const PatternAssignment& assignment, Parameters& grads);

// Incremental single-token evaluation backed by one DilatedKVCache per layer.
// Requires a uniform pattern across the heads of each layer.
class ModelDecoder {
  public:
    ModelDecoder(const Parameters& params, const ModelConfig& config,
                 const PatternAssignment& assignment);

    // Absorbs one token and returns the next-token logits row.
    std::vector<double> step(std::int32_t token);

    std::int64_t position() const { return pos_; }
    CacheFootprint footprint() const;
    const DilatedKVCache& cache(std::int64_t layer) const {
        return caches_[static_cast<std::size_t>(layer)];
    }

  private:
    const Parameters* params_;
    ModelConfig config_;
    std::vector<DilatedKVCache> caches_;
    std::int64_t pos_ = 0;
};

}  // namespace rmx
