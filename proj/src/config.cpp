#include "rmx/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace rmx {

namespace {

void require_fields(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                    const char* what) {
    if (!j.is_object()) throw std::runtime_error(std::string(what) + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* name : allowed) {
            if (it.key() == name) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw std::runtime_error(std::string(what) + ": unknown field '" + it.key() + "'");
        }
    }
}

SparsePatternSpec spec_from(const nlohmann::json& j) {
    return SparsePatternSpec::from_json(j.dump());
}

nlohmann::json spec_to(const SparsePatternSpec& spec) {
    return nlohmann::json::parse(spec.to_json());
}

}  // namespace

Corpus CorpusConfig::build(std::uint64_t seed) const {
    if (task == "file") {
        if (path.empty()) throw std::runtime_error("corpus: file task needs a path");
        return corpus_from_file(path, seq_len);
    }
    return synth_task_generate(synth_task_from_name(task), size_tokens, seq_len, vocab, seed);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["model"] = model.to_json();
    j["assignment"] = nlohmann::json::parse(assignment.to_json());
    j["corpus"] = {{"task", corpus.task},
                   {"size_tokens", corpus.size_tokens},
                   {"seq_len", corpus.seq_len},
                   {"vocab", corpus.vocab},
                   {"path", corpus.path}};
    j["train"] = {{"mode", train_mode_name(train.mode)},
                  {"sparse", spec_to(train.sparse)},
                  {"dense", spec_to(train.dense)},
                  {"steps", train.steps},
                  {"batch", train.batch},
                  {"peak_lr", train.peak_lr},
                  {"final_lr_frac", train.final_lr_frac},
                  {"warmup_frac", train.warmup_frac},
                  {"weight_decay", train.weight_decay},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"clip", train.clip},
                  {"shared_batch", train.shared_batch}};
    j["adapt"] = {{"target", spec_to(adapt.target)},
                  {"lr", adapt.lr},
                  {"token_budget", adapt.token_budget},
                  {"batch", adapt.batch},
                  {"weight_decay", adapt.weight_decay},
                  {"clip", adapt.clip}};
    nlohmann::json pats = nlohmann::json::array();
    for (const auto& p : eval.patterns) pats.push_back(spec_to(p));
    j["eval"] = {{"patterns", pats}, {"max_tokens", eval.max_tokens}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    // config_hash appears in persisted effective configs; it is derived, so
    // loading one back ignores it rather than treating it as unknown.
    require_fields(j, {"seed", "out_dir", "model", "assignment", "corpus", "train", "adapt",
                       "eval", "config_hash"},
                   "config");
    RunConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("assignment")) {
        c.assignment = PatternAssignment::from_json(j.at("assignment").dump());
    }
    if (j.contains("corpus")) {
        const auto& jc = j.at("corpus");
        require_fields(jc, {"task", "size_tokens", "seq_len", "vocab", "path"}, "corpus config");
        if (jc.contains("task")) c.corpus.task = jc.at("task").get<std::string>();
        if (jc.contains("size_tokens")) c.corpus.size_tokens = jc.at("size_tokens").get<std::int64_t>();
        if (jc.contains("seq_len")) c.corpus.seq_len = jc.at("seq_len").get<std::int64_t>();
        if (jc.contains("vocab")) c.corpus.vocab = jc.at("vocab").get<std::int64_t>();
        if (jc.contains("path")) c.corpus.path = jc.at("path").get<std::string>();
        if (c.corpus.task != "file") synth_task_from_name(c.corpus.task);
    }
    if (j.contains("train")) {
        const auto& jt = j.at("train");
        require_fields(jt,
                       {"mode", "sparse", "dense", "steps", "batch", "peak_lr", "final_lr_frac",
                        "warmup_frac", "weight_decay", "beta1", "beta2", "clip", "shared_batch"},
                       "train config");
        if (jt.contains("mode")) c.train.mode = train_mode_from_name(jt.at("mode").get<std::string>());
        if (jt.contains("sparse")) c.train.sparse = spec_from(jt.at("sparse"));
        if (jt.contains("dense")) c.train.dense = spec_from(jt.at("dense"));
        if (jt.contains("steps")) c.train.steps = jt.at("steps").get<std::int64_t>();
        if (jt.contains("batch")) c.train.batch = jt.at("batch").get<std::int64_t>();
        if (jt.contains("peak_lr")) c.train.peak_lr = jt.at("peak_lr").get<double>();
        if (jt.contains("final_lr_frac")) c.train.final_lr_frac = jt.at("final_lr_frac").get<double>();
        if (jt.contains("warmup_frac")) c.train.warmup_frac = jt.at("warmup_frac").get<double>();
        if (jt.contains("weight_decay")) c.train.weight_decay = jt.at("weight_decay").get<double>();
        if (jt.contains("beta1")) c.train.beta1 = jt.at("beta1").get<double>();
        if (jt.contains("beta2")) c.train.beta2 = jt.at("beta2").get<double>();
        if (jt.contains("clip")) c.train.clip = jt.at("clip").get<double>();
        if (jt.contains("shared_batch")) c.train.shared_batch = jt.at("shared_batch").get<bool>();
    }
    if (j.contains("adapt")) {
        const auto& ja = j.at("adapt");
        require_fields(ja, {"target", "lr", "token_budget", "batch", "weight_decay", "clip"},
                       "adapt config");
        if (ja.contains("target")) c.adapt.target = spec_from(ja.at("target"));
        if (ja.contains("lr")) c.adapt.lr = ja.at("lr").get<double>();
        if (ja.contains("token_budget")) c.adapt.token_budget = ja.at("token_budget").get<std::int64_t>();
        if (ja.contains("batch")) c.adapt.batch = ja.at("batch").get<std::int64_t>();
        if (ja.contains("weight_decay")) c.adapt.weight_decay = ja.at("weight_decay").get<double>();
        if (ja.contains("clip")) c.adapt.clip = ja.at("clip").get<double>();
    }
    if (j.contains("eval")) {
        const auto& je = j.at("eval");
        require_fields(je, {"patterns", "max_tokens"}, "eval config");
        if (je.contains("patterns")) {
            c.eval.patterns.clear();
            for (const auto& p : je.at("patterns")) c.eval.patterns.push_back(spec_from(p));
        }
        if (je.contains("max_tokens")) c.eval.max_tokens = je.at("max_tokens").get<std::int64_t>();
    }
    // Training and adaptation derive their sampling streams from the run seed.
    c.train.seed = c.seed;
    c.adapt.seed = c.seed + 1;
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config: parse error in '" + path + "': " + e.what());
    }
    return from_json(j);
}

std::string RunConfig::resolved_out_dir() const {
    if (!out_dir.empty()) return out_dir;
    if (const char* env = std::getenv("RMX_OUT_DIR"); env != nullptr && env[0] != '\0') {
        return env;
    }
    return ".";
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(to_json().dump()); }

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::runtime_error("override: expected key.path=value, got '" + assignment + "'");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;  // bare strings need no quotes on the command line
    }

    nlohmann::json* node = &j;
    std::size_t start = 0;
    std::vector<std::string> keys;
    while (true) {
        const auto dotpos = path.find('.', start);
        keys.push_back(path.substr(start, dotpos == std::string::npos ? dotpos : dotpos - start));
        if (dotpos == std::string::npos) break;
        start = dotpos + 1;
    }
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!node->is_object() || !node->contains(keys[i])) {
            throw std::runtime_error("override: no such config path '" + path + "'");
        }
        node = &(*node)[keys[i]];
    }
    const std::string& leaf = keys.back();
    // The leaf may be new only inside objects that accept optional fields;
    // requiring existence elsewhere catches typos. Pattern specs routinely
    // omit optional fields, so their leaves may be introduced here.
    if (!node->is_object()) {
        throw std::runtime_error("override: no such config path '" + path + "'");
    }
    (*node)[leaf] = value;
}

std::uint64_t persist_effective_config(const RunConfig& config, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::uint64_t h = config.hash();
    nlohmann::json j = config.to_json();
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    j["config_hash"] = hex;
    std::ofstream out(dir + "/effective_config.json");
    if (!out) throw std::runtime_error("config: cannot write effective config in '" + dir + "'");
    out << j.dump(2) << "\n";
    return h;
}

}  // namespace rmx
