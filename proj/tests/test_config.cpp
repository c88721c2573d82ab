#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "rmx/config.hpp"

using namespace rmx;

TEST_SUITE("config") {

TEST_CASE("run configs round-trip through json unchanged") {
    RunConfig c;
    c.seed = 99;
    c.out_dir = "runs/demo";
    c.train.mode = TrainMode::Joint;
    c.train.sparse = SparsePatternSpec::dilated(8, 0, 0);
    c.adapt.target = SparsePatternSpec::dilated(4, 0, 4);
    c.eval.patterns = {SparsePatternSpec::dense(), SparsePatternSpec::dilated(16, 64, 4)};

    const nlohmann::json j = c.to_json();
    const RunConfig back = RunConfig::from_json(j);
    CHECK(back.to_json().dump() == j.dump());
    CHECK(back.seed == 99);
    CHECK(back.train.seed == 99);
    CHECK(back.adapt.seed == 100);
    CHECK((back.eval.patterns[1] == SparsePatternSpec::dilated(16, 64, 4)));
}

TEST_CASE("unknown keys are rejected at every level") {
    const nlohmann::json base = RunConfig{}.to_json();

    nlohmann::json top = base;
    top["colour"] = "red";
    CHECK_THROWS(RunConfig::from_json(top));

    nlohmann::json model = base;
    model["model"]["dropout"] = 0.1;
    CHECK_THROWS(RunConfig::from_json(model));

    nlohmann::json corpus = base;
    corpus["corpus"]["stride"] = 2;
    CHECK_THROWS(RunConfig::from_json(corpus));

    nlohmann::json train = base;
    train["train"]["momentum"] = 0.9;
    CHECK_THROWS(RunConfig::from_json(train));

    nlohmann::json adapt = base;
    adapt["adapt"]["epochs"] = 3;
    CHECK_THROWS(RunConfig::from_json(adapt));

    nlohmann::json eval = base;
    eval["eval"]["metric"] = "bpc";
    CHECK_THROWS(RunConfig::from_json(eval));

    nlohmann::json spec = base;
    spec["train"]["sparse"]["dilations"] = 8;
    CHECK_THROWS(RunConfig::from_json(spec));
}

TEST_CASE("dotted overrides reach nested fields with json or string values") {
    nlohmann::json j = RunConfig{}.to_json();

    apply_override(j, "seed=42");
    apply_override(j, "model.model_dim=128");
    apply_override(j, "train.mode=SUMMED_LOSS");
    apply_override(j, "train.sparse.dilation=16");
    apply_override(j, "train.shared_batch=false");
    apply_override(j, "corpus.task=needle");

    const RunConfig c = RunConfig::from_json(j);
    CHECK(c.seed == 42);
    CHECK(c.model.model_dim == 128);
    CHECK(c.train.mode == TrainMode::SummedLoss);
    CHECK(c.train.sparse.dilation == 16);
    CHECK(c.train.shared_batch == false);
    CHECK(c.corpus.task == "needle");
}

TEST_CASE("overrides on absent paths or malformed text fail loudly") {
    nlohmann::json j = RunConfig{}.to_json();
    CHECK_THROWS(apply_override(j, "nosuch.field=1"));
    CHECK_THROWS(apply_override(j, "model.layers.deep=1"));
    CHECK_THROWS(apply_override(j, "justakey"));
    CHECK_THROWS(apply_override(j, "=5"));

    // A typo in the final segment survives the override but dies in parsing.
    apply_override(j, "model.headz=4");
    CHECK_THROWS(RunConfig::from_json(j));
}

TEST_CASE("configs load from disk and parse errors carry the path") {
    const std::string path = "test_runconfig.json";
    {
        std::ofstream out(path);
        out << RunConfig{}.to_json().dump(2);
    }
    const RunConfig c = RunConfig::from_file(path);
    CHECK(c.seed == 1);
    std::remove(path.c_str());

    {
        std::ofstream out(path);
        out << "{ not json";
    }
    CHECK_THROWS_WITH_AS(RunConfig::from_file(path),
                         doctest::Contains("test_runconfig.json"), std::runtime_error);
    std::remove(path.c_str());
    CHECK_THROWS(RunConfig::from_file("does_not_exist.json"));
}

TEST_CASE("output directory resolution prefers explicit, then environment") {
    RunConfig c;
    c.out_dir = "explicit";
    CHECK(c.resolved_out_dir() == "explicit");

    c.out_dir.clear();
    setenv("RMX_OUT_DIR", "from_env", 1);
    CHECK(c.resolved_out_dir() == "from_env");
    unsetenv("RMX_OUT_DIR");
    CHECK(c.resolved_out_dir() == ".");
}

TEST_CASE("config hashes are stable and sensitive") {
    RunConfig a;
    RunConfig b;
    CHECK(a.hash() == b.hash());
    b.seed = 2;
    CHECK(a.hash() != b.hash());

    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("effective configs persist alongside artifacts with their hash") {
    RunConfig c;
    c.out_dir = "test_cfg_dir";
    const std::uint64_t h = persist_effective_config(c, c.resolved_out_dir());
    CHECK(h == c.hash());

    std::ifstream in("test_cfg_dir/effective_config.json");
    REQUIRE(in.good());
    const nlohmann::json j = nlohmann::json::parse(in);
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    CHECK(j.at("config_hash").get<std::string>() == hex);
    CHECK(j.at("seed").get<std::uint64_t>() == 1);
    in.close();

    // A persisted effective config is itself a valid run config: loading it
    // back reproduces the same canonical form and hash.
    const RunConfig reloaded = RunConfig::from_file("test_cfg_dir/effective_config.json");
    CHECK(reloaded.hash() == h);
    CHECK(reloaded.to_json().dump() == c.to_json().dump());

    std::remove("test_cfg_dir/effective_config.json");
    std::filesystem::remove("test_cfg_dir");
}

TEST_CASE("corpus configs build the requested generator") {
    CorpusConfig cc;
    cc.task = "copy";
    cc.size_tokens = 64 * 4;
    cc.seq_len = 64;
    cc.vocab = 16;
    const Corpus c = cc.build(3);
    CHECK(c.windows() == 4);
    CHECK(c.vocab == 16);

    CorpusConfig bad;
    bad.task = "file";
    CHECK_THROWS(bad.build(3));
}

}  // TEST_SUITE("config")
