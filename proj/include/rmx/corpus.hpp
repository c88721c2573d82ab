#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rmx/rng.hpp"

namespace rmx {

struct Corpus {
    std::vector<std::int32_t> tokens;
    std::int64_t vocab = 0;
    std::int64_t seq_len = 0;  // natural window length; sequences never straddle it

    std::int64_t windows() const {
        return seq_len > 0 ? static_cast<std::int64_t>(tokens.size()) / seq_len : 0;
    }
    std::span<const std::int32_t> window(std::int64_t i) const {
        return std::span<const std::int32_t>(tokens).subspan(
            static_cast<std::size_t>(i * seq_len), static_cast<std::size_t>(seq_len));
    }
};

enum class SynthTask { Copy, Needle, CharLm };

SynthTask synth_task_from_name(const std::string& name);
std::string synth_task_name(SynthTask task);

// Deterministic synthetic corpora, token count rounded down to whole windows.
//
// Copy:   each window tiles one random motif of period 3..8, so every token
//         after the first period is predictable from a short history.
// Needle: filler with interleaved (key value) pairs; each window ends with
//         a repeated key whose value must be recalled from far back.
// CharLm: a second-order random walk, giving a smooth statistical task.
Corpus synth_task_generate(SynthTask task, std::int64_t size_tokens, std::int64_t seq_len,
                           std::int64_t vocab, std::uint64_t seed);

// Byte-level corpus from a file, vocab 256.
Corpus corpus_from_file(const std::string& path, std::int64_t seq_len);

}  // namespace rmx
