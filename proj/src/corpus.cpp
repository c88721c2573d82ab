#include "rmx/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

namespace rmx {

SynthTask synth_task_from_name(const std::string& name) {
    std::string lower;
    for (char c : name) lower.push_back(static_cast<char>(std::tolower(c)));
    if (lower == "copy") return SynthTask::Copy;
    if (lower == "needle") return SynthTask::Needle;
    if (lower == "char_lm") return SynthTask::CharLm;
    throw std::runtime_error("corpus: unknown task '" + name + "'");
}

std::string synth_task_name(SynthTask task) {
    switch (task) {
        case SynthTask::Copy: return "copy";
        case SynthTask::Needle: return "needle";
        case SynthTask::CharLm: return "char_lm";
    }
    throw std::runtime_error("corpus: bad task enum");
}

namespace {

void fill_copy_window(std::span<std::int32_t> w, std::int64_t vocab, Rng& rng) {
    const std::int64_t period = rng.uniform_int(3, 8);
    std::vector<std::int32_t> motif(static_cast<std::size_t>(period));
    for (auto& m : motif) m = static_cast<std::int32_t>(rng.uniform_int(0, vocab - 1));
    for (std::size_t t = 0; t < w.size(); ++t) {
        w[t] = motif[t % static_cast<std::size_t>(period)];
    }
}

void fill_needle_window(std::span<std::int32_t> w, std::int64_t vocab, Rng& rng) {
    if (vocab < 24 || w.size() < 32) {
        throw std::runtime_error("corpus: needle task needs vocab >= 24 and seq_len >= 32");
    }
    const std::int64_t n_keys = 8;
    const std::int64_t key_base = vocab - n_keys;
    for (auto& t : w) t = static_cast<std::int32_t>(rng.uniform_int(0, 3));

    // Distinct keys, each followed by its value, scattered over the body.
    const std::int64_t n_pairs = 4;
    std::set<std::int64_t> used_slots;
    std::vector<std::pair<std::int32_t, std::int32_t>> pairs;
    for (std::int64_t i = 0; i < n_pairs; ++i) {
        const auto key = static_cast<std::int32_t>(key_base + i);
        const auto value = static_cast<std::int32_t>(rng.uniform_int(4, key_base - 1));
        std::int64_t slot = 0;
        do {
            slot = rng.uniform_int(0, static_cast<std::int64_t>(w.size()) * 3 / 4 - 2);
        } while (used_slots.count(slot) != 0 || used_slots.count(slot + 1) != 0 ||
                 used_slots.count(slot - 1) != 0);
        used_slots.insert(slot);
        used_slots.insert(slot + 1);
        w[static_cast<std::size_t>(slot)] = key;
        w[static_cast<std::size_t>(slot) + 1] = value;
        pairs.emplace_back(key, value);
    }
    const auto& probe = pairs[static_cast<std::size_t>(rng.uniform_int(0, n_pairs - 1))];
    w[w.size() - 2] = probe.first;
    w[w.size() - 1] = probe.second;
}

void fill_char_lm_window(std::span<std::int32_t> w, std::int64_t vocab, Rng& rng) {
    // Velocity-preserving walk: the next token continues the current drift,
    // occasionally kicked, which makes short histories highly informative.
    std::int64_t prev2 = rng.uniform_int(0, vocab - 1);
    std::int64_t prev = rng.uniform_int(0, vocab - 1);
    for (auto& t : w) {
        std::int64_t kick = 0;
        const double u = rng.uniform();
        if (u < 0.1) kick = -1;
        else if (u >= 0.9) kick = 1;
        std::int64_t next = (2 * prev - prev2 + kick) % vocab;
        if (next < 0) next += vocab;
        t = static_cast<std::int32_t>(next);
        prev2 = prev;
        prev = next;
    }
}

}  // namespace

Corpus synth_task_generate(SynthTask task, std::int64_t size_tokens, std::int64_t seq_len,
                           std::int64_t vocab, std::uint64_t seed) {
    if (seq_len < 2) throw std::runtime_error("corpus: seq_len must be at least 2");
    if (vocab < 4) throw std::runtime_error("corpus: vocab must be at least 4");
    const std::int64_t n_windows = size_tokens / seq_len;
    if (n_windows <= 0) throw std::runtime_error("corpus: size_tokens below one window");

    Corpus c;
    c.vocab = vocab;
    c.seq_len = seq_len;
    c.tokens.resize(static_cast<std::size_t>(n_windows * seq_len));
    Rng rng(seed);
    for (std::int64_t i = 0; i < n_windows; ++i) {
        auto w = std::span<std::int32_t>(c.tokens)
                     .subspan(static_cast<std::size_t>(i * seq_len),
                              static_cast<std::size_t>(seq_len));
        switch (task) {
            case SynthTask::Copy: fill_copy_window(w, vocab, rng); break;
            case SynthTask::Needle: fill_needle_window(w, vocab, rng); break;
            case SynthTask::CharLm: fill_char_lm_window(w, vocab, rng); break;
        }
    }
    return c;
}

Corpus corpus_from_file(const std::string& path, std::int64_t seq_len) {
    if (seq_len < 2) throw std::runtime_error("corpus: seq_len must be at least 2");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("corpus: cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    const std::int64_t n_windows = static_cast<std::int64_t>(bytes.size()) / seq_len;
    if (n_windows <= 0) throw std::runtime_error("corpus: file shorter than one window");

    Corpus c;
    c.vocab = 256;
    c.seq_len = seq_len;
    c.tokens.resize(static_cast<std::size_t>(n_windows * seq_len));
    for (std::size_t i = 0; i < c.tokens.size(); ++i) {
        c.tokens[i] = static_cast<std::int32_t>(static_cast<unsigned char>(bytes[i]));
    }
    return c;
}

}  // namespace rmx
