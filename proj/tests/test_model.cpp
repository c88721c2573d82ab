#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "rmx/container_io.hpp"
#include "rmx/corpus.hpp"
#include "rmx/model.hpp"
#include "rmx/train.hpp"

using namespace rmx;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab = 8;
    c.model_dim = 8;
    c.layers = 2;
    c.heads = 2;
    c.head_dim = 4;
    c.ffn_dim = 12;
    c.context = 64;
    return c;
}

std::vector<std::int32_t> random_tokens(Rng& rng, std::int64_t n, std::int64_t vocab) {
    std::vector<std::int32_t> t(static_cast<std::size_t>(n));
    for (auto& x : t) x = static_cast<std::int32_t>(rng.uniform_int(0, vocab - 1));
    return t;
}

// All parameter scalars behind one flat index, in visit order.
struct FlatParams {
    std::vector<double*> slots;
    explicit FlatParams(Parameters& p) {
        p.visit([this](const std::string&, Array& a) {
            for (std::size_t i = 0; i < a.size(); ++i) slots.push_back(&a[i]);
        });
    }
};

void check_model_gradients(const PatternAssignment& assignment, std::uint64_t seed) {
    const ModelConfig config = tiny_config();
    Rng rng(seed);
    Parameters params = Parameters::init(config, rng);
    const auto tokens = random_tokens(rng, 6, config.vocab);

    LmRecord record;
    forward_lm(params, config, tokens, assignment, &record);
    Parameters grads = params.zeros_like();
    backward_lm(params, config, record, assignment, grads);

    FlatParams pview(params);
    FlatParams gview(grads);
    REQUIRE(pview.slots.size() == gview.slots.size());

    auto loss_at = [&]() {
        const Array logits = forward_lm(params, config, tokens, assignment);
        return lm_loss(logits, tokens);
    };

    // Deterministic stratified sample: a handful of coordinates from every
    // parameter tensor, plus extras from the big ones.
    std::vector<std::size_t> picks;
    {
        std::size_t offset = 0;
        Rng pick_rng(seed ^ 0x9e3779b97f4a7c15ull);
        params.visit([&](const std::string&, Array& a) {
            const std::size_t n = a.size();
            const std::size_t want = std::min<std::size_t>(n, 3);
            for (std::size_t i = 0; i < want; ++i) {
                picks.push_back(offset + static_cast<std::size_t>(pick_rng.uniform_int(
                                             0, static_cast<std::int64_t>(n) - 1)));
            }
            offset += n;
        });
    }

    const double h = 1e-5;
    for (std::size_t idx : picks) {
        double* slot = pview.slots[idx];
        const double keep = *slot;
        *slot = keep + h;
        const double up = loss_at();
        *slot = keep - h;
        const double down = loss_at();
        *slot = keep;
        const double fd = (up - down) / (2.0 * h);
        const double got = *gview.slots[idx];
        const double denom = std::max({std::abs(fd), std::abs(got), 1e-6});
        CHECK(std::abs(fd - got) / denom < 1e-4);
    }
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("loss matches a direct high-precision computation") {
    Array logits = Array::from({3, 4}, {0.1, -0.2, 0.3, 0.0,   //
                                        1.0, 2.0, -1.0, 0.5,   //
                                        0.0, 0.0, 0.0, 0.0});
    const std::vector<std::int32_t> tokens{1, 3, 2};
    long double total = 0.0L;
    for (std::size_t t = 0; t + 1 < 3; ++t) {
        long double s = 0.0L;
        for (std::size_t j = 0; j < 4; ++j) s += expl(static_cast<long double>(logits(t, j)));
        total += logl(s) - static_cast<long double>(logits(t, static_cast<std::size_t>(tokens[t + 1])));
    }
    const double want = static_cast<double>(total / 2.0L);
    CHECK(lm_loss(logits, tokens) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("loss rejects malformed inputs") {
    Array logits({2, 4});
    CHECK_THROWS(lm_loss(logits, std::vector<std::int32_t>{1}));
    CHECK_THROWS(lm_loss(logits, std::vector<std::int32_t>{1, 2, 3}));
}

TEST_CASE("forward is deterministic and shaped [T x vocab]") {
    const ModelConfig config = tiny_config();
    Rng rng(11);
    const Parameters params = Parameters::init(config, rng);
    const auto tokens = random_tokens(rng, 10, config.vocab);
    const auto assign = PatternAssignment::uniform(SparsePatternSpec::dense());
    const Array a = forward_lm(params, config, tokens, assign);
    const Array b = forward_lm(params, config, tokens, assign);
    REQUIRE(a.rank() == 2);
    CHECK(a.dim(0) == 10);
    CHECK(a.dim(1) == static_cast<std::size_t>(config.vocab));
    CHECK(oracles::max_abs_diff(a, b) == 0.0);
}

TEST_CASE("forward rejects bad tokens and oversized sequences") {
    const ModelConfig config = tiny_config();
    Rng rng(3);
    const Parameters params = Parameters::init(config, rng);
    const auto assign = PatternAssignment::uniform(SparsePatternSpec::dense());
    CHECK_THROWS(forward_lm(params, config, std::vector<std::int32_t>{}, assign));
    CHECK_THROWS(forward_lm(params, config, std::vector<std::int32_t>{0, 99}, assign));
    const auto long_seq = random_tokens(rng, config.context + 1, config.vocab);
    CHECK_THROWS(forward_lm(params, config, long_seq, assign));
}

TEST_CASE("init draws matrices at the configured scale and unit norms") {
    const ModelConfig config = tiny_config();
    Rng rng(5);
    const Parameters params = Parameters::init(config, rng);
    for (double v : params.blocks[0].attn_norm.flat()) CHECK(v == 1.0);
    for (double v : params.final_norm.flat()) CHECK(v == 1.0);
    double sq = 0.0;
    std::size_t n = 0;
    params.visit([&](const std::string&, const Array& a) {
        if (a.rank() == 1) return;
        for (double v : a.flat()) {
            sq += v * v;
            ++n;
        }
        for (double v : a.flat()) CHECK(std::abs(v) < 0.02 * 6.0);
    });
    const double std_hat = std::sqrt(sq / static_cast<double>(n));
    CHECK(std_hat == doctest::Approx(0.02).epsilon(0.15));
}

TEST_CASE("parameter gradients match finite differences (dense)") {
    check_model_gradients(PatternAssignment::uniform(SparsePatternSpec::dense()), 101);
}

TEST_CASE("parameter gradients match finite differences (dilated with extras)") {
    check_model_gradients(PatternAssignment::uniform(SparsePatternSpec::dilated(2, 1, 1)), 202);
}

TEST_CASE("parameter gradients match finite differences (hybrid heads and layers)") {
    PatternAssignment assign;
    assign.fallback = SparsePatternSpec::dense();
    assign.per_head[{0, 0}] = SparsePatternSpec::dilated(2, 1, 1);
    assign.per_layer[1] = SparsePatternSpec::dilated(3, 0, 0);
    check_model_gradients(assign, 303);
}

TEST_CASE("per-layer mixing config collapses uniform head assignments") {
    const ModelConfig config = tiny_config();
    const auto uniform = PatternAssignment::uniform(SparsePatternSpec::dilated(4));
    CHECK(mix_config_for_layer(config, uniform, 0).head_specs.empty());

    PatternAssignment hybrid;
    hybrid.fallback = SparsePatternSpec::dense();
    hybrid.per_head[{0, 1}] = SparsePatternSpec::dilated(4);
    const MixConfig mc = mix_config_for_layer(config, hybrid, 0);
    REQUIRE(mc.head_specs.size() == 2);
    CHECK((mc.head_specs[0] == SparsePatternSpec::dense()));
    CHECK((mc.head_specs[1] == SparsePatternSpec::dilated(4)));
}

TEST_CASE("incremental decoding matches the batched forward pass") {
    const ModelConfig config = tiny_config();
    Rng rng(17);
    const Parameters params = Parameters::init(config, rng);
    const auto tokens = random_tokens(rng, 20, config.vocab);

    for (const SparsePatternSpec& spec :
         {SparsePatternSpec::dense(), SparsePatternSpec::dilated(4, 3, 2)}) {
        const auto assign = PatternAssignment::uniform(spec);
        const Array logits = forward_lm(params, config, tokens, assign);
        ModelDecoder dec(params, config, assign);
        double worst = 0.0;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            const auto row = dec.step(tokens[t]);
            for (std::size_t v = 0; v < row.size(); ++v) {
                worst = std::max(worst, std::abs(row[v] - logits(t, v)));
            }
        }
        CAPTURE(spec.label());
        CHECK(worst < 1e-9);
        CHECK(dec.position() == 20);
        CHECK(dec.footprint().entries == 2 * dec.cache(0).entry_count());
    }
}

TEST_CASE("decoder refuses head-hybrid layers") {
    const ModelConfig config = tiny_config();
    Rng rng(19);
    const Parameters params = Parameters::init(config, rng);
    PatternAssignment hybrid;
    hybrid.fallback = SparsePatternSpec::dense();
    hybrid.per_head[{0, 1}] = SparsePatternSpec::dilated(4);
    CHECK_THROWS(ModelDecoder(params, config, hybrid));
}

TEST_CASE("checkpoints round-trip through the f32 container") {
    const ModelConfig config = tiny_config();
    Rng rng(23);
    const Parameters params = Parameters::init(config, rng);
    PatternAssignment assign;
    assign.fallback = SparsePatternSpec::dilated(8, 0, 4);
    assign.per_layer[1] = SparsePatternSpec::dense();

    const std::string path = "test_checkpoint_roundtrip.rmx";
    save_checkpoint(path, params, config, assign, 23, 57);
    const Checkpoint ck = load_checkpoint(path);
    std::remove(path.c_str());

    CHECK(ck.seed == 23);
    CHECK(ck.steps_done == 57);
    CHECK(ck.config.model_dim == config.model_dim);
    CHECK((ck.assignment.resolve(1, 0) == SparsePatternSpec::dense()));
    CHECK((ck.assignment.resolve(0, 0) == SparsePatternSpec::dilated(8, 0, 4)));

    double worst = 0.0;
    std::vector<const Array*> got, want;
    ck.params.visit([&got](const std::string&, const Array& a) { got.push_back(&a); });
    params.visit([&want](const std::string&, const Array& a) { want.push_back(&a); });
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        REQUIRE(got[i]->same_shape(*want[i]));
        worst = std::max(worst, oracles::max_abs_diff(*got[i], *want[i]));
    }
    CHECK(worst < 1e-7);  // f32 narrowing on values of scale 0.02

    const auto tokens = random_tokens(rng, 12, config.vocab);
    const Array a = forward_lm(params, config, tokens, ck.assignment);
    const Array b = forward_lm(ck.params, ck.config, tokens, ck.assignment);
    CHECK(oracles::max_abs_diff(a, b) < 1e-4);
}

TEST_CASE("checkpoint loading rejects foreign containers") {
    const std::string path = "test_checkpoint_badmagic.rmx";
    io::Container c;
    c.magic = "XXXX";
    io::save_container(path, c);
    CHECK_THROWS(load_checkpoint(path));
    std::remove(path.c_str());
}

TEST_CASE("model config json round-trips and rejects unknown fields") {
    ModelConfig c = tiny_config();
    c.rope.enabled = false;
    const ModelConfig back = ModelConfig::from_json(c.to_json());
    CHECK(back.vocab == c.vocab);
    CHECK(back.head_dim == c.head_dim);
    CHECK(back.rope.enabled == false);

    nlohmann::json j = c.to_json();
    j["extra"] = 1;
    CHECK_THROWS(ModelConfig::from_json(j));
    nlohmann::json j2 = c.to_json();
    j2["rope"]["theta"] = 1.0;
    CHECK_THROWS(ModelConfig::from_json(j2));
}

TEST_CASE("ffn width defaults to eight thirds of the model width") {
    ModelConfig c = tiny_config();
    c.ffn_dim = 0;
    c.model_dim = 64;
    CHECK(c.resolved_ffn_dim() == 171);
    c.ffn_dim = 96;
    CHECK(c.resolved_ffn_dim() == 96);
}

}  // TEST_SUITE("model")

TEST_SUITE("corpus") {

TEST_CASE("copy windows tile a short motif") {
    const Corpus c = synth_task_generate(SynthTask::Copy, 64 * 20, 64, 32, 42);
    REQUIRE(c.windows() == 20);
    for (std::int64_t w = 0; w < c.windows(); ++w) {
        const auto win = c.window(w);
        bool periodic = false;
        for (std::int64_t p = 3; p <= 8 && !periodic; ++p) {
            bool ok = true;
            for (std::size_t t = static_cast<std::size_t>(p); t < win.size() && ok; ++t) {
                ok = win[t] == win[t - static_cast<std::size_t>(p)];
            }
            periodic = ok;
        }
        CHECK(periodic);
    }
}

TEST_CASE("needle windows end with a recallable pair") {
    const Corpus c = synth_task_generate(SynthTask::Needle, 128 * 10, 128, 32, 7);
    for (std::int64_t w = 0; w < c.windows(); ++w) {
        const auto win = c.window(w);
        const auto key = win[win.size() - 2];
        const auto val = win[win.size() - 1];
        CHECK(key >= 32 - 8);
        bool found = false;
        for (std::size_t t = 0; t + 1 < win.size() - 2; ++t) {
            if (win[t] == key) {
                CHECK(win[t + 1] == val);
                found = true;
            }
        }
        CHECK(found);
    }
}

TEST_CASE("char lm stays in range and is deterministic per seed") {
    const Corpus a = synth_task_generate(SynthTask::CharLm, 4096, 64, 24, 5);
    const Corpus b = synth_task_generate(SynthTask::CharLm, 4096, 64, 24, 5);
    const Corpus c = synth_task_generate(SynthTask::CharLm, 4096, 64, 24, 6);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens != c.tokens);
    for (auto t : a.tokens) {
        CHECK(t >= 0);
        CHECK(t < 24);
    }
}

TEST_CASE("file corpora are byte-faithful") {
    const std::string path = "test_corpus_bytes.bin";
    {
        std::vector<unsigned char> bytes(300);
        for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<unsigned char>(i % 251);
        FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fwrite(bytes.data(), 1, bytes.size(), f);
        std::fclose(f);
    }
    const Corpus c = corpus_from_file(path, 128);
    std::remove(path.c_str());
    REQUIRE(c.windows() == 2);  // trailing partial window dropped
    CHECK(c.vocab == 256);
    for (std::size_t i = 0; i < c.tokens.size(); ++i) {
        CHECK(c.tokens[i] == static_cast<std::int32_t>(i % 251));
    }
}

TEST_CASE("task names round-trip and bad names throw") {
    CHECK(synth_task_from_name("copy") == SynthTask::Copy);
    CHECK(synth_task_from_name("NEEDLE") == SynthTask::Needle);
    CHECK(synth_task_name(SynthTask::CharLm) == "char_lm");
    CHECK_THROWS(synth_task_from_name("mystery"));
}

}  // TEST_SUITE("corpus")
