#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rmx/corpus.hpp"
#include "rmx/model.hpp"
#include "rmx/pattern.hpp"

namespace rmx {

enum class TrainMode { Joint, DenseOnly, SummedLoss };

TrainMode train_mode_from_name(const std::string& name);
std::string train_mode_name(TrainMode mode);

// Decoupled AdamW with global-norm gradient clipping. Weight decay applies to
// matrices only; the rank-1 norm weights are exempt.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;

    void step(Parameters& params, const Parameters& grads, double lr);

    std::int64_t steps_done = 0;

  private:
    std::optional<Parameters> m_, v_;
};

// Clips grads in place to a global L2 norm and returns the pre-clip norm.
double clip_global_norm(Parameters& grads, double max_norm);

// Linear warmup to peak, then cosine to final_frac * peak.
double lr_at(std::int64_t step, std::int64_t total_steps, double peak, double warmup_frac,
             double final_frac);

struct TrainSpec {
    TrainMode mode = TrainMode::Joint;
    SparsePatternSpec sparse;  // used by Joint and SummedLoss
    SparsePatternSpec dense = SparsePatternSpec::dense();
    std::int64_t steps = 200;  // batches; Joint takes two optimizer steps per batch
    std::int64_t batch = 4;
    double peak_lr = 3e-3;
    double final_lr_frac = 0.1;
    double warmup_frac = 0.05;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double clip = 1.0;
    std::uint64_t seed = 1;
    // Joint only: when set, both passes of a batch reuse the same sequences.
    bool shared_batch = true;

    void validate() const;
};

struct LossRow {
    std::int64_t step = 0;  // optimizer update index
    double loss = 0.0;
    double lr = 0.0;
    std::string pattern;
};

struct TrainResult {
    std::vector<LossRow> trace;
    std::int64_t tokens_seen = 0;
};

TrainResult train_lm(Parameters& params, const ModelConfig& config, const Corpus& corpus,
                     const TrainSpec& spec);

// Short continued training at a constant learning rate, no warmup, aimed at
// one inference-time pattern. Stops when the token budget is spent.
struct AdaptSpec {
    SparsePatternSpec target;
    double lr = 2e-5;
    std::int64_t token_budget = 50000;
    std::int64_t batch = 4;
    double weight_decay = 0.1;
    double clip = 1.0;
    std::uint64_t seed = 7;
};

TrainResult adapt_lm(Parameters& params, const ModelConfig& config, const Corpus& corpus,
                     const AdaptSpec& spec);

// Mean exp(NLL) over up to max_tokens of held-out windows.
double eval_ppl(const Parameters& params, const ModelConfig& config, const Corpus& corpus,
                const PatternAssignment& assignment, std::int64_t max_tokens = 0);

void write_loss_csv(const std::string& path, const std::vector<LossRow>& trace,
                    std::uint64_t config_hash, std::uint64_t seed);

// Model checkpoint: every parameter tensor plus the model config and the
// pattern assignment it was trained with.
void save_checkpoint(const std::string& path, const Parameters& params,
                     const ModelConfig& config, const PatternAssignment& assignment,
                     std::uint64_t seed, std::int64_t steps_done);

struct Checkpoint {
    Parameters params;
    ModelConfig config;
    PatternAssignment assignment;
    std::uint64_t seed = 0;
    std::int64_t steps_done = 0;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace rmx
