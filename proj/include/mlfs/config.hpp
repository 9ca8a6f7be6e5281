#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "synthetic.hpp"
#include "trainer.hpp"

namespace mlfs {

// one run, fully described: architecture grid, schedule, distillation and task
struct RunConfig {
    // [model]
    std::size_t vocab = 32, max_seq = 16;
    std::vector<WidthTriple> widths{{8, 1, 16}, {16, 2, 32}, {32, 4, 64}};
    std::vector<std::size_t> depths{2, 4};
    // [train]
    double lr = 1e-3, weight_decay = 0.0, gamma = 1.0;
    std::array<std::size_t, 3> epochs{2, 2, 2};
    std::size_t batch = 8, subnets_per_step = 3, pretrain_epochs = 1, distill_epochs = 2;
    bool grad_scaling = true;
    SamplingPolicy policy = SamplingPolicy::sandwich;
    std::uint64_t seed = 0;
    // [distill]
    double alpha = 0.9, temperature = 1.0, beta = 0.1;
    std::size_t d_low = 8, rank = 4;
    // [task]
    std::string task = "classify";
    std::size_t size = 2048, seq_len = 8, classes = 4;

    std::string source = "<defaults>";                // file name for error messages
    std::map<std::string, std::size_t> section_line;  // section -> line of its header
};

namespace detail {

struct ConfigCursor {
    const std::string& source;
    std::size_t line;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(source + ":" + std::to_string(line) + ": " + msg);
    }
};

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& s) {
    for (std::size_t i = 0; i < s.size(); ++i)
        if ((s[i] == '#' || s[i] == ';') && (i == 0 || s[i - 1] == ' ' || s[i - 1] == '\t'))
            return s.substr(0, i);
    return s;
}

inline std::uint64_t parse_u64(const ConfigCursor& at, const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        at.fail(key + ": expected a non-negative integer, got '" + v + "'");
    errno = 0;
    char* end = nullptr;
    std::uint64_t out = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size()) at.fail(key + ": integer out of range: '" + v + "'");
    return out;
}

inline double parse_double(const ConfigCursor& at, const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    double out = std::strtod(v.c_str(), &end);
    if (v.empty() || errno != 0 || end != v.c_str() + v.size())
        at.fail(key + ": expected a number, got '" + v + "'");
    return out;
}

inline bool parse_bool(const ConfigCursor& at, const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    at.fail(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& v, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline std::vector<std::size_t> parse_size_list(const ConfigCursor& at, const std::string& key,
                                                const std::string& v) {
    std::vector<std::size_t> out;
    for (const std::string& part : split(v, ','))
        out.push_back(static_cast<std::size_t>(parse_u64(at, key, part)));
    return out;
}

// "d:h:f" triples, comma separated, e.g. "8:1:16, 16:2:32, 32:4:64"
inline std::vector<WidthTriple> parse_width_list(const ConfigCursor& at, const std::string& key,
                                                 const std::string& v) {
    std::vector<WidthTriple> out;
    for (const std::string& part : split(v, ',')) {
        std::vector<std::string> dims = split(part, ':');
        if (dims.size() != 3) at.fail(key + ": width entry '" + part + "' is not d:h:f");
        WidthTriple w;
        w.d = static_cast<std::size_t>(parse_u64(at, key, dims[0]));
        w.h = static_cast<std::size_t>(parse_u64(at, key, dims[1]));
        w.f = static_cast<std::size_t>(parse_u64(at, key, dims[2]));
        if (w.h == 0) at.fail(key + ": width '" + part + "' has zero heads");
        if (w.d == 0 || w.d % w.h != 0)
            at.fail(key + ": width '" + part + "' needs head count dividing model width");
        out.push_back(w);
    }
    return out;
}

}  // namespace detail

// builders: RunConfig -> the typed objects the trainer consumes

inline ConfigSpace space_of(const RunConfig& cfg) { return ConfigSpace(cfg.widths, cfg.depths); }

inline ModelDims dims_of(const RunConfig& cfg) {
    ModelDims dims;
    dims.d = cfg.widths.back().d;
    dims.h = cfg.widths.back().h;
    dims.f = cfg.widths.back().f;
    dims.L = cfg.depths.back();
    dims.vocab = cfg.vocab;
    dims.max_seq = cfg.max_seq;
    dims.n_out = cfg.task == "char_lm" ? cfg.vocab : cfg.classes;
    return dims;
}

inline TrainPlan plan_of(const RunConfig& cfg) {
    TrainPlan plan;
    plan.lr = cfg.lr;
    plan.weight_decay = cfg.weight_decay;
    plan.batch = cfg.batch;
    plan.pretrain_epochs = cfg.pretrain_epochs;
    plan.distill_epochs = cfg.distill_epochs;
    plan.stages.epochs = cfg.epochs;
    plan.stages.subnets_per_step = cfg.subnets_per_step;
    plan.stages.policy = cfg.policy;
    plan.gamma = cfg.gamma;
    plan.grad_scaling = cfg.grad_scaling;
    plan.seed = cfg.seed;
    plan.distill.alpha = cfg.alpha;
    plan.distill.temperature = cfg.temperature;
    plan.distill.beta.assign(cfg.depths.back(), cfg.beta);
    plan.distill.d_low = cfg.d_low;
    return plan;
}

inline SplitDataset make_task(const RunConfig& cfg) {
    Dataset ds = cfg.task == "char_lm"
                     ? make_char_lm(cfg.size, cfg.vocab, cfg.seq_len, cfg.seed)
                     : make_classify(cfg.size, cfg.vocab, cfg.seq_len, cfg.classes, cfg.seed);
    return split_dataset(ds, 0.1, cfg.seed);
}

// cross-field checks, annotated with the owning section's header line
inline void validate_run_config(const RunConfig& cfg) {
    auto fail = [&](const std::string& section, const std::string& msg) {
        std::string where = cfg.source;
        auto it = cfg.section_line.find(section);
        if (it != cfg.section_line.end()) where += ":" + std::to_string(it->second);
        throw ConfigError(where + ": [" + section + "] " + msg);
    };
    try {
        space_of(cfg);
    } catch (const ConfigError& e) {
        fail("model", e.what());
    }
    if (cfg.vocab < 2) fail("model", "vocab must be at least 2");
    if (cfg.max_seq < cfg.seq_len)
        fail("model", "max_seq " + std::to_string(cfg.max_seq) + " is shorter than task seq_len " +
                          std::to_string(cfg.seq_len));
    if (cfg.subnets_per_step < 2) fail("train", "K must be at least 2");
    try {
        validate_plan(plan_of(cfg), cfg.depths.back());
    } catch (const ConfigError& e) {
        fail("train", e.what());
    }
    if (cfg.d_low > cfg.widths.back().d)
        fail("distill", "d_low " + std::to_string(cfg.d_low) + " exceeds the maxnet width " +
                            std::to_string(cfg.widths.back().d));
    if (cfg.rank < 1) fail("distill", "rank must be at least 1");
    if (cfg.task != "classify" && cfg.task != "char_lm")
        fail("task", "unknown task '" + cfg.task + "' (expected classify or char_lm)");
    if (cfg.size < 2) fail("task", "size must be at least 2 for a train/val split");
    if (cfg.task == "classify") {
        if (cfg.classes < 2) fail("task", "classify needs at least 2 classes");
        if (cfg.vocab <= cfg.classes)
            fail("task", "vocab " + std::to_string(cfg.vocab) + " leaves no filler tokens beyond " +
                             std::to_string(cfg.classes) + " class markers");
        if (cfg.seq_len < 4) fail("task", "classify needs seq_len >= 4");
    } else {
        if (cfg.vocab < 4) fail("task", "char_lm needs vocab >= 4");
        if (cfg.seq_len < 2) fail("task", "char_lm needs seq_len >= 2");
    }
}

inline RunConfig parse_run_config(const std::string& text, const std::string& source) {
    RunConfig cfg;
    cfg.source = source;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::map<std::string, bool> seen;
    std::map<std::string, std::pair<std::size_t, std::size_t>> max_keys;  // key -> (line, value)
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        detail::ConfigCursor at{source, line_no};
        std::string line = detail::trim(detail::strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') at.fail("unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "train" && section != "distill" && section != "task")
                at.fail("unknown section [" + section + "]");
            cfg.section_line.emplace(section, line_no);
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) at.fail("expected key = value");
        if (section.empty()) at.fail("key outside any section");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) at.fail("empty key");
        if (value.empty()) at.fail(key + ": empty value");
        if (!seen.emplace(section + "." + key, true).second)
            at.fail("duplicate key '" + key + "' in [" + section + "]");

        auto u64 = [&] { return detail::parse_u64(at, key, value); };
        auto num = [&] { return detail::parse_double(at, key, value); };
        auto sz = [&] { return static_cast<std::size_t>(detail::parse_u64(at, key, value)); };
        if (section == "model") {
            if (key == "vocab") cfg.vocab = sz();
            else if (key == "max_seq") cfg.max_seq = sz();
            else if (key == "allowed_widths") cfg.widths = detail::parse_width_list(at, key, value);
            else if (key == "allowed_depths") cfg.depths = detail::parse_size_list(at, key, value);
            else if (key == "d_max" || key == "h_max" || key == "f_max" || key == "L_max")
                max_keys[key] = {line_no, sz()};  // redundant with the grid; cross-checked below
            else at.fail("unknown key '" + key + "' in [model]");
        } else if (section == "train") {
            if (key == "lr") cfg.lr = num();
            else if (key == "weight_decay") cfg.weight_decay = num();
            else if (key == "gamma") cfg.gamma = num();
            else if (key == "batch") cfg.batch = sz();
            else if (key == "K") cfg.subnets_per_step = sz();
            else if (key == "pretrain_epochs") cfg.pretrain_epochs = sz();
            else if (key == "distill_epochs") cfg.distill_epochs = sz();
            else if (key == "grad_scaling") cfg.grad_scaling = detail::parse_bool(at, key, value);
            else if (key == "seed") cfg.seed = u64();
            else if (key == "epochs") {
                std::vector<std::size_t> e = detail::parse_size_list(at, key, value);
                if (e.size() != 3) at.fail("epochs: expected 3 comma-separated stage counts");
                cfg.epochs = {e[0], e[1], e[2]};
            } else if (key == "policy") {
                if (value == "sandwich") cfg.policy = SamplingPolicy::sandwich;
                else if (value == "uniform") cfg.policy = SamplingPolicy::uniform;
                else at.fail("policy: expected sandwich or uniform, got '" + value + "'");
            } else at.fail("unknown key '" + key + "' in [train]");
        } else if (section == "distill") {
            if (key == "alpha") cfg.alpha = num();
            else if (key == "t" || key == "temperature") cfg.temperature = num();
            else if (key == "beta") cfg.beta = num();
            else if (key == "d_low") cfg.d_low = sz();
            else if (key == "r" || key == "rank") cfg.rank = sz();
            else at.fail("unknown key '" + key + "' in [distill]");
        } else {
            if (key == "name") cfg.task = value;
            else if (key == "size") cfg.size = sz();
            else if (key == "seq_len") cfg.seq_len = sz();
            else if (key == "classes") cfg.classes = sz();
            else at.fail("unknown key '" + key + "' in [task]");
        }
    }

    // redundant *_max keys must agree with the grid they summarize
    auto check_max = [&](const std::string& key, std::size_t actual) {
        auto it = max_keys.find(key);
        if (it == max_keys.end()) return;
        if (it->second.second != actual) {
            detail::ConfigCursor at{source, it->second.first};
            at.fail(key + " = " + std::to_string(it->second.second) +
                    " disagrees with the grid maximum " + std::to_string(actual));
        }
    };
    if (!cfg.widths.empty()) {
        check_max("d_max", cfg.widths.back().d);
        check_max("h_max", cfg.widths.back().h);
        check_max("f_max", cfg.widths.back().f);
    }
    if (!cfg.depths.empty()) check_max("L_max", cfg.depths.back());

    validate_run_config(cfg);
    return cfg;
}

// MLFS_SEED wins over the file's seed when set
inline void apply_env_seed(RunConfig& cfg) {
    const char* env = std::getenv("MLFS_SEED");
    if (env == nullptr || *env == '\0') return;
    std::string v(env);
    if (v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("MLFS_SEED: expected a non-negative integer, got '" + v + "'");
    errno = 0;
    char* end = nullptr;
    std::uint64_t out = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size())
        throw ConfigError("MLFS_SEED: integer out of range: '" + v + "'");
    cfg.seed = out;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    RunConfig cfg = parse_run_config(ss.str(), path);
    apply_env_seed(cfg);
    return cfg;
}

}  // namespace mlfs
