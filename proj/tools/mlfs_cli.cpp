#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "mlfs/mlfs.hpp"

using namespace mlfs;

namespace {

// flag errors exit 2 with usage; everything else exits 1 with its cause
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

const char* kUsage = R"(usage: mlfs <command> [flags]

commands:
  train-supernet   staged supernet training with stage-shared adapters
                   --config F [--out CSV] [--save-base F] [--save-adapters F]
  distill-student  distill a trained supernet onto a small student
                   --config F --base F --adapters F [--width D --depth L]
                   [--out CSV] [--save-student F]
  slice-export     materialize one subnet as standalone merged weights
                   --config F --base F --adapters F --width D --depth L --out F
  eval             loss/accuracy of subnets or an exported file
                   --config F (--weights F | --base F --adapters F
                   [--width D --depth L ...]) [--split train|val]
                   [--quantized] [--out CSV]
  gradcheck        finite-difference audit of every parameter class
                   [--seed N] [--probes N]
  ablate-gamma     staged runs with scaling off / gamma 1 / gamma 2
                   --config F --out CSV (writes one CSV per arm)
  ablate-init      subnet fine-tuning from sliced vs random weights
                   --config F [--width D --depth L] [--eval-every N] --out CSV

MLFS_SEED overrides the config seed. All flags take a value except
--quantized. Flags may repeat only where listed.
)";

struct Args {
    std::map<std::string, std::string> once;
    std::vector<std::pair<std::string, std::string>> listed;  // --width/--depth, in order
    bool quantized = false;
};

Args parse_args(int argc, char** argv, int from) {
    Args a;
    for (int i = from; i < argc; ++i) {
        std::string t = argv[i];
        if (t.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + t + "'");
        std::string name = t.substr(2);
        if (name == "quantized") {
            a.quantized = true;
            continue;
        }
        if (i + 1 >= argc) throw UsageError("flag --" + name + " needs a value");
        std::string value = argv[++i];
        if (name == "width" || name == "depth") {
            a.listed.emplace_back(name, value);
        } else if (!a.once.emplace(name, value).second) {
            throw UsageError("flag --" + name + " given twice");
        }
    }
    return a;
}

std::string need(const Args& a, const std::string& name) {
    auto it = a.once.find(name);
    if (it == a.once.end()) throw UsageError("missing required flag --" + name);
    return it->second;
}

std::string opt(const Args& a, const std::string& name, const std::string& fallback = "") {
    auto it = a.once.find(name);
    return it == a.once.end() ? fallback : it->second;
}

std::size_t parse_count(const std::string& name, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw UsageError("--" + name + " expects a non-negative integer, got '" + v + "'");
    try {
        return static_cast<std::size_t>(std::stoull(v));
    } catch (const std::exception&) {
        throw UsageError("--" + name + ": integer out of range: '" + v + "'");
    }
}

void reject_unknown(const Args& a, std::initializer_list<const char*> allowed, bool lists_ok,
                    bool quantized_ok = false) {
    for (const auto& [k, v] : a.once) {
        bool ok = false;
        for (const char* name : allowed)
            if (k == name) ok = true;
        if (!ok) throw UsageError("unknown flag --" + k);
    }
    if (!lists_ok && !a.listed.empty()) throw UsageError("unknown flag --" + a.listed.front().first);
    if (!quantized_ok && a.quantized) throw UsageError("unknown flag --quantized");
}

RunConfig config_from(const Args& a) {
    std::string path = opt(a, "config");
    if (path.empty()) {
        RunConfig cfg;
        apply_env_seed(cfg);
        return cfg;
    }
    return load_run_config(path);
}

// --width/--depth pairs -> configs; h and f follow the grid's triple for d
std::vector<ArchConfig> listed_configs(const Args& a, const ConfigSpace& space) {
    std::vector<std::size_t> widths, depths;
    for (const auto& [k, v] : a.listed)
        (k == "width" ? widths : depths).push_back(parse_count(k, v));
    if (widths.size() != depths.size())
        throw UsageError("--width and --depth must come in pairs (" + std::to_string(widths.size()) +
                         " widths, " + std::to_string(depths.size()) + " depths)");
    std::vector<ArchConfig> out;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const WidthTriple* hit = nullptr;
        for (const WidthTriple& w : space.widths())
            if (w.d == widths[i]) hit = &w;
        if (hit == nullptr)
            throw ConfigError("width " + std::to_string(widths[i]) + " is not in the allowed grid");
        ArchConfig c{hit->d, hit->h, hit->f, depths[i]};
        space.require(c);
        out.push_back(c);
    }
    return out;
}

void write_rows(const std::string& path, const std::vector<MetricsRow>& rows) {
    if (path.empty()) return;
    write_metrics_csv(path, rows);
    std::printf("wrote %zu rows to %s\n", rows.size(), path.c_str());
}

// "curves.csv" + "g1" -> "curves.g1.csv"
std::string arm_path(const std::string& out, const std::string& arm) {
    std::string stem = out;
    std::string ext = "";
    std::size_t dot = out.rfind('.');
    if (dot != std::string::npos && dot > out.rfind('/') + 1) {
        stem = out.substr(0, dot);
        ext = out.substr(dot);
    }
    return stem + "." + arm + ext;
}

// round weights through the container in memory: identical to a disk roundtrip
EffectiveWeights quantized(const EffectiveWeights& W) {
    NamedTensors ts;
    for (const auto& [name, t] : effective_named(W)) ts.emplace_back(name, t);
    NamedTensors decoded = decode_checkpoint(encode_checkpoint(ts));
    EffectiveWeights out = detach_weights(W);
    for (auto& [name, t] : effective_named(out)) {
        Tensor dst = t;
        detail::assign_values(dst, detail::find_tensor(decoded, name), name);
    }
    return out;
}

int cmd_train_supernet(const Args& a) {
    reject_unknown(a, {"config", "out", "save-base", "save-adapters"}, false);
    RunConfig cfg = config_from(a);
    ConfigSpace space = space_of(cfg);
    ModelDims dims = dims_of(cfg);
    TrainPlan plan = plan_of(cfg);
    SplitDataset data = make_task(cfg);

    Supernet net = Supernet::create(dims, data.train.task, cfg.rank, cfg.seed);
    Rng brng = Rng(cfg.seed).fork(12);
    ProjectionBank bank = ProjectionBank::for_space(space, cfg.d_low, brng);

    std::vector<MetricsRow> rows = pretrain_teacher(net, data.train, data.val, plan);
    std::string adapters_out = opt(a, "save-adapters");
    auto on_stage_end = [&](int stage, std::size_t steps) {
        (void)steps;
        if (!adapters_out.empty())
            save_supernet_adapters(net, bank, arm_path(adapters_out, "stage" + std::to_string(stage)));
    };
    SupernetRun run = train_supernet(net, space, data.train, data.val, plan, bank, on_stage_end);
    rows.insert(rows.end(), run.rows.begin(), run.rows.end());

    write_rows(opt(a, "out"), rows);
    std::string base_out = opt(a, "save-base");
    if (!base_out.empty()) {
        save_supernet_base(net, base_out);
        std::printf("wrote base to %s\n", base_out.c_str());
    }
    if (!adapters_out.empty()) {
        save_supernet_adapters(net, bank, adapters_out);
        std::printf("wrote adapters to %s\n", adapters_out.c_str());
    }

    EvalResult emax = evaluate(net, space.maxnet(), kNumStages - 1, data.val, plan.batch);
    EvalResult emin = evaluate(net, space.minnet(), kNumStages - 1, data.val, plan.batch);
    std::printf("staged steps: %zu\n", run.steps);
    std::printf("maxnet %s val loss %.6f accuracy %.4f\n", space.maxnet().str().c_str(), emax.loss,
                emax.accuracy);
    std::printf("minnet %s val loss %.6f accuracy %.4f\n", space.minnet().str().c_str(), emin.loss,
                emin.accuracy);
    return 0;
}

int cmd_distill_student(const Args& a) {
    reject_unknown(a, {"config", "base", "adapters", "out", "save-student"}, true);
    RunConfig cfg = config_from(a);
    ConfigSpace space = space_of(cfg);
    TrainPlan plan = plan_of(cfg);
    SplitDataset data = make_task(cfg);
    LoadedSupernet teacher = load_supernet(need(a, "base"), need(a, "adapters"));

    std::vector<ArchConfig> picked = listed_configs(a, space);
    if (picked.size() > 1) throw UsageError("distill-student takes at most one --width/--depth pair");
    ArchConfig c = picked.empty() ? space.minnet() : picked.front();

    StudentModel student =
        make_student(teacher.net, c, kNumStages - 1, cfg.rank, teacher.bank, true, cfg.seed);
    DistillRun run = distill_student(teacher.net, space, student, data.train, data.val, plan);
    write_rows(opt(a, "out"), run.rows);

    std::string student_out = opt(a, "save-student");
    if (!student_out.empty()) {
        save_weights(merge_student(student), student_out);
        std::printf("wrote student to %s\n", student_out.c_str());
    }
    EvalResult ev = evaluate_weights(merge_student(student), data.val, plan.batch);
    std::printf("student %s val loss %.6f accuracy %.4f\n", c.str().c_str(), ev.loss, ev.accuracy);
    return 0;
}

int cmd_slice_export(const Args& a) {
    reject_unknown(a, {"config", "base", "adapters", "out"}, true);
    RunConfig cfg = config_from(a);
    ConfigSpace space = space_of(cfg);
    LoadedSupernet teacher = load_supernet(need(a, "base"), need(a, "adapters"));
    std::vector<ArchConfig> picked = listed_configs(a, space);
    if (picked.size() != 1) throw UsageError("slice-export needs exactly one --width/--depth pair");
    EffectiveWeights W = materialize_subnet(teacher.net, picked.front(), kNumStages - 1);
    save_weights(W, need(a, "out"));
    std::printf("exported %s to %s\n", picked.front().str().c_str(), need(a, "out").c_str());
    return 0;
}

int cmd_eval(const Args& a) {
    reject_unknown(a, {"config", "weights", "base", "adapters", "split", "out"}, true, true);
    RunConfig cfg = config_from(a);
    ConfigSpace space = space_of(cfg);
    SplitDataset data = make_task(cfg);
    std::string split = opt(a, "split", "val");
    if (split != "train" && split != "val") throw UsageError("--split must be train or val");
    const Dataset& ds = split == "val" ? data.val : data.train;

    std::vector<MetricsRow> rows;
    std::string weights_path = opt(a, "weights");
    if (!weights_path.empty()) {
        if (a.once.count("base") || a.once.count("adapters"))
            throw UsageError("--weights excludes --base/--adapters");
        EffectiveWeights W = load_weights(weights_path);
        EvalResult ev = evaluate_weights(W, ds, cfg.batch);
        std::printf("eval %s split=%s loss %.17g accuracy %.17g\n", W.c.str().c_str(), split.c_str(),
                    ev.loss, ev.accuracy);
        rows.push_back(eval_row(0, kNumStages - 1, W.c.str(), split, ev.loss, ev.accuracy));
    } else {
        LoadedSupernet teacher = load_supernet(need(a, "base"), need(a, "adapters"));
        std::vector<ArchConfig> configs = listed_configs(a, space);
        if (configs.empty()) configs = {space.maxnet(), space.minnet()};
        for (const ArchConfig& c : configs) {
            EffectiveWeights W = materialize_subnet(teacher.net, c, kNumStages - 1);
            if (a.quantized) W = quantized(W);
            EvalResult ev = evaluate_weights(W, ds, cfg.batch);
            std::printf("eval %s split=%s loss %.17g accuracy %.17g\n", c.str().c_str(), split.c_str(),
                        ev.loss, ev.accuracy);
            rows.push_back(eval_row(0, kNumStages - 1, c.str(), split, ev.loss, ev.accuracy));
        }
    }
    write_rows(opt(a, "out"), rows);
    return 0;
}

int cmd_gradcheck(const Args& a) {
    reject_unknown(a, {"seed", "probes"}, false);
    std::uint64_t seed = parse_count("seed", opt(a, "seed", "7"));
    std::size_t probes = parse_count("probes", opt(a, "probes", "4"));
    bool all_ok = true;
    for (const auto& [name, rep] : run_fd_suite(seed, probes)) {
        bool ok = rep.ok(1e-4);
        all_ok = all_ok && ok;
        std::printf("gradcheck %-28s max_rel %.3e over %zu probes  [%s]\n", name.c_str(), rep.max_rel_err,
                    rep.checked, ok ? "OK" : "FAIL");
        if (!ok) std::printf("  worst: %s\n", rep.worst.c_str());
    }
    if (!all_ok) std::fprintf(stderr, "mlfs: gradient check failed\n");
    return all_ok ? 0 : 1;
}

int cmd_ablate_gamma(const Args& a) {
    reject_unknown(a, {"config", "out"}, false);
    RunConfig cfg = config_from(a);
    std::string out = need(a, "out");
    struct Arm {
        const char* name;
        bool scaling;
        double gamma;
    };
    for (const Arm& arm : {Arm{"unscaled", false, 1.0}, Arm{"g1", true, 1.0}, Arm{"g2", true, 2.0}}) {
        RunConfig c = cfg;
        c.grad_scaling = arm.scaling;
        c.gamma = arm.gamma;
        ConfigSpace space = space_of(c);
        ModelDims dims = dims_of(c);
        TrainPlan plan = plan_of(c);
        SplitDataset data = make_task(c);
        Supernet net = Supernet::create(dims, data.train.task, c.rank, c.seed);
        Rng brng = Rng(c.seed).fork(12);
        ProjectionBank bank = ProjectionBank::for_space(space, c.d_low, brng);
        std::vector<MetricsRow> rows = pretrain_teacher(net, data.train, data.val, plan);
        SupernetRun run = train_supernet(net, space, data.train, data.val, plan, bank);
        rows.insert(rows.end(), run.rows.begin(), run.rows.end());
        write_rows(arm_path(out, arm.name), rows);
        EvalResult emin = evaluate(net, space.minnet(), kNumStages - 1, data.val, plan.batch);
        EvalResult emax = evaluate(net, space.maxnet(), kNumStages - 1, data.val, plan.batch);
        std::printf("arm %-8s minnet val loss %.6f acc %.4f | maxnet val loss %.6f acc %.4f\n", arm.name,
                    emin.loss, emin.accuracy, emax.loss, emax.accuracy);
    }
    return 0;
}

int cmd_ablate_init(const Args& a) {
    reject_unknown(a, {"config", "out", "eval-every"}, true);
    RunConfig cfg = config_from(a);
    std::string out = need(a, "out");
    std::size_t eval_every = parse_count("eval-every", opt(a, "eval-every", "10"));
    ConfigSpace space = space_of(cfg);
    ModelDims dims = dims_of(cfg);
    TrainPlan plan = plan_of(cfg);
    SplitDataset data = make_task(cfg);

    std::vector<ArchConfig> picked = listed_configs(a, space);
    if (picked.size() > 1) throw UsageError("ablate-init takes at most one --width/--depth pair");
    ArchConfig c = picked.empty() ? space.minnet() : picked.front();

    Supernet net = Supernet::create(dims, data.train.task, cfg.rank, cfg.seed);
    Rng brng = Rng(cfg.seed).fork(12);
    ProjectionBank bank = ProjectionBank::for_space(space, cfg.d_low, brng);
    pretrain_teacher(net, data.train, data.val, plan);
    train_supernet(net, space, data.train, data.val, plan, bank);

    InitAblation ab = sliced_vs_random_init(net, space, c, data.train, data.val, plan, eval_every);
    auto dump = [&](const char* arm, const std::vector<double>& curve) {
        std::vector<MetricsRow> rows;
        for (std::size_t i = 0; i < curve.size(); ++i)
            rows.push_back(eval_row(i * eval_every, kNumStages - 1, c.str(), "val", curve[i], 0.0));
        write_rows(arm_path(out, arm), rows);
    };
    dump("sliced", ab.sliced_val_loss);
    dump("random", ab.random_val_loss);
    std::printf("sliced init: step0 val loss %.6f auc %.6f\n", ab.sliced_val_loss.front(), ab.sliced_auc);
    std::printf("random init: step0 val loss %.6f auc %.6f\n", ab.random_val_loss.front(), ab.random_auc);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fputs(kUsage, stderr);
        return 2;
    }
    std::string cmd = argv[1];
    if (cmd == "help" || cmd == "--help" || cmd == "-h") {
        std::fputs(kUsage, stdout);
        return 0;
    }
    try {
        Args a = parse_args(argc, argv, 2);
        if (cmd == "train-supernet") return cmd_train_supernet(a);
        if (cmd == "distill-student") return cmd_distill_student(a);
        if (cmd == "slice-export") return cmd_slice_export(a);
        if (cmd == "eval") return cmd_eval(a);
        if (cmd == "gradcheck") return cmd_gradcheck(a);
        if (cmd == "ablate-gamma") return cmd_ablate_gamma(a);
        if (cmd == "ablate-init") return cmd_ablate_init(a);
        throw UsageError("unknown command '" + cmd + "'");
    } catch (const UsageError& e) {
        std::fprintf(stderr, "mlfs: %s\n\n%s", e.what(), kUsage);
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "mlfs: %s\n", e.what());
        return 1;
    }
}
