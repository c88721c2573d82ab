#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmx/corpus.hpp"
#include "rmx/model.hpp"
#include "rmx/pattern.hpp"
#include "rmx/train.hpp"

#include "json.hpp"

namespace rmx {

struct CorpusConfig {
    std::string task = "copy";  // copy | needle | char_lm | file
    std::int64_t size_tokens = 262144;
    std::int64_t seq_len = 256;
    std::int64_t vocab = 32;
    std::string path;  // file task only

    Corpus build(std::uint64_t seed) const;
};

struct EvalConfig {
    std::vector<SparsePatternSpec> patterns;
    std::int64_t max_tokens = 0;  // 0 = whole corpus
};

// One run description: strict JSON in, effective JSON out. Unknown keys are
// rejected everywhere; dotted-path overrides land before validation.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir;  // empty resolves via RMX_OUT_DIR, then "."
    ModelConfig model;
    PatternAssignment assignment;  // inference-time default patterns
    CorpusConfig corpus;
    TrainSpec train;
    AdaptSpec adapt;
    EvalConfig eval;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);

    std::string resolved_out_dir() const;
    std::uint64_t hash() const;  // FNV-1a over the canonical dump
};

// Applies "a.b.c=value" onto raw JSON; the value parses as JSON when it can,
// else as a string. The path must already exist so typos fail loudly.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Writes the effective config next to the run artifacts and returns its hash.
std::uint64_t persist_effective_config(const RunConfig& config, const std::string& dir);

std::uint64_t fnv1a64(const std::string& text);

}  // namespace rmx
