#include "depthprune/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "depthprune/baselines.hpp"
#include "depthprune/checkpoint.hpp"
#include "depthprune/config.hpp"
#include "depthprune/errors.hpp"
#include "depthprune/gradcheck_suite.hpp"
#include "depthprune/layered_net.hpp"
#include "depthprune/mask_learning.hpp"
#include "depthprune/mask_space.hpp"
#include "depthprune/optim.hpp"
#include "depthprune/recovery.hpp"
#include "depthprune/report.hpp"
#include "depthprune/task.hpp"

namespace depthprune {

namespace {

namespace fs = std::filesystem;

// Bad flags or config contents, reported with exit code 1.
class UsageError : public Error {
  public:
    using Error::Error;
};

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::int64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "flat 'key = value' config file");
    sub->add_option("--set", c.overrides, "override one config key, as key=value")->take_all();
    sub->add_option("--seed", c.seed, "master seed (config key 'seed')");
}

Config resolve(const Common& c, std::ostream& err) {
    try {
        Config cfg = c.config.empty() ? Config() : load_config(c.config);
        for (const std::string& kv : c.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (c.seed) cfg.set("seed", std::to_string(*c.seed));
        for (const std::string& w : cfg.warnings()) err << "warning: " << w << '\n';
        std::istringstream lines(cfg.resolved());
        for (std::string line; std::getline(lines, line);) err << "# " << line << '\n';
        return cfg;
    } catch (const ParseError& e) {
        throw UsageError(e.what());
    } catch (const IoError& e) {
        throw UsageError(e.what());
    }
}

TaskData task_data(const Config& cfg) {
    return make_task_data(cfg.get_size("seed"), cfg.get_size("train_samples"));
}

LayeredNet load_net(const std::string& path) { return net_from_checkpoint(Checkpoint::load(path)); }

std::size_t retained(const Config& cfg, std::size_t n_layers) {
    const BlockPartition part{n_layers, cfg.get_size("block"), cfg.get_size("keep")};
    part.validate();
    return part.blocks() * part.keep;
}

Tensor parse_cond(const std::string& text, std::size_t c) {
    if (text.empty()) return Tensor::zeros({std::max<std::size_t>(c, 1)});
    std::vector<double> values;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("conditioning entry '" + item + "' is not a number");
        }
    }
    if (values.size() != c) {
        throw UsageError("conditioning has " + std::to_string(values.size()) + " entries, net expects " +
                         std::to_string(c));
    }
    return Tensor::vector(std::move(values));
}

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path, std::ostream& err) {
    ckpt.save(path);
    err << "wrote " << path.string() << '\n';
}

}  // namespace

std::string format_space_report(std::size_t n_layers, std::size_t block_size, std::size_t keep) {
    const BlockPartition part{n_layers, block_size, keep};
    const SubspaceStats stats = valid_subspace_stats(part);
    char pct[64];
    std::snprintf(pct, sizeof pct, "%.4f", stats.fraction * 100.0);
    std::ostringstream out;
    out << "layers " << n_layers << '\n'
        << "block " << block_size << '\n'
        << "keep " << keep << '\n'
        << "total " << stats.total << '\n'
        << "valid " << stats.valid << '\n'
        << "fraction " << pct << "%\n";
    return out.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Learnable depth pruning of gated residual networks", "depthprune"};
    app.require_subcommand(1);
    app.fallthrough(false);

    Common common;

    // space
    std::size_t sp_layers = 24, sp_block = 4, sp_keep = 2;
    auto* space = app.add_subcommand("space", "search-space and valid-subspace sizes");
    space->add_option("--layers", sp_layers, "N")->capture_default_str();
    space->add_option("--block", sp_block, "B")->capture_default_str();
    space->add_option("--keep", sp_keep, "s")->capture_default_str();

    // train-teacher
    std::string tt_out;
    std::optional<std::size_t> tt_steps;
    auto* train_teacher_cmd = app.add_subcommand("train-teacher", "train the full toy teacher");
    add_common(train_teacher_cmd, common);
    train_teacher_cmd->add_option("--out", tt_out, "teacher checkpoint")->required();
    train_teacher_cmd->add_option("--steps", tt_steps, "training steps (config 'teacher_steps')");

    // learn-mask
    std::string lm_teacher, lm_dir;
    bool lm_no_activation = false;
    std::optional<std::size_t> lm_steps;
    auto* learn = app.add_subcommand("learn-mask", "learn p(m), q(t) and deltas, then decide a mask");
    add_common(learn, common);
    learn->add_option("--teacher", lm_teacher, "teacher checkpoint")->required();
    learn->add_option("--out-dir", lm_dir, "writes dist.tpkt, mask.txt, decision.log")->required();
    learn->add_flag("--no-activation", lm_no_activation, "disable dynamic inter-block activation");
    learn->add_option("--steps", lm_steps, "mask learning steps (config 'mask_steps')");

    // prune
    std::string pr_teacher, pr_mask, pr_out;
    auto* prune = app.add_subcommand("prune", "physically remove masked-out layers");
    add_common(prune, common);
    prune->add_option("--teacher", pr_teacher, "teacher checkpoint")->required();
    prune->add_option("--mask", pr_mask, "mask file")->required();
    prune->add_option("--out", pr_out, "student checkpoint")->required();

    // finetune
    std::string ft_teacher, ft_mask, ft_out, ft_report, ft_label = "custom";
    std::optional<std::size_t> ft_steps;
    auto* finetune = app.add_subcommand("finetune", "distill a masked student back toward the teacher");
    add_common(finetune, common);
    finetune->add_option("--teacher", ft_teacher, "teacher checkpoint")->required();
    finetune->add_option("--mask", ft_mask, "mask file")->required();
    finetune->add_option("--out", ft_out, "pruned student checkpoint")->required();
    finetune->add_option("--report", ft_report, "one-row recoverability CSV");
    finetune->add_option("--strategy", ft_label, "strategy label for the report");
    finetune->add_option("--steps", ft_steps, "fine-tuning steps (config 'finetune_steps')");

    // baseline
    std::string bl_strategy, bl_teacher, bl_out, bl_diag;
    auto* baseline = app.add_subcommand("baseline", "mask from a comparison strategy");
    add_common(baseline, common);
    baseline->add_option("--strategy", bl_strategy, "strategy")
        ->required()
        ->check(CLI::IsMember({"random-min", "similarity", "sensitivity", "uniform", "block-local"}));
    baseline->add_option("--teacher", bl_teacher, "teacher checkpoint (not needed by uniform)");
    baseline->add_option("--out", bl_out, "mask file")->required();
    baseline->add_option("--diagnostics", bl_diag, "per-layer scores as layer,score CSV");

    // benchmark
    std::string bm_teacher, bm_out;
    std::size_t bm_seeds = 5, bm_jobs = 1;
    std::vector<std::string> bm_strategies;
    auto* bench = app.add_subcommand("benchmark", "fine-tune every strategy over several seeds");
    add_common(bench, common);
    bench->add_option("--teacher", bm_teacher, "teacher checkpoint")->required();
    bench->add_option("--out", bm_out, "recoverability CSV")->required();
    bench->add_option("--seeds", bm_seeds, "seeds seed, seed+1, ...")->capture_default_str()->check(CLI::PositiveNumber);
    bench->add_option("--jobs", bm_jobs, "concurrent grid cells")->capture_default_str()->check(CLI::PositiveNumber);
    bench->add_option("--strategies", bm_strategies, "subset of strategies")
        ->check(CLI::IsMember(benchmark_strategies()));

    // precache
    std::string pc_teacher, pc_out, pc_cond;
    bool pc_keep_cond = false;
    auto* precache = app.add_subcommand("precache", "cache modulation and drop the conditioning path");
    add_common(precache, common);
    precache->add_option("--teacher", pc_teacher, "network checkpoint")->required();
    precache->add_option("--out", pc_out, "output checkpoint")->required();
    precache->add_option("--cond", pc_cond, "comma-separated conditioning (config 'cache_cond')");
    precache->add_flag("--keep-cond-weights", pc_keep_cond, "cache only, keep w_cond/b_cond");

    // gradcheck
    std::size_t gc_trials = 20;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every differentiable op");
    add_common(gradcheck, common);
    gradcheck->add_option("--trials", gc_trials, "random inputs per op")->capture_default_str()->check(CLI::PositiveNumber);

    std::vector<const char*> argv{"depthprune"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, err, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, err, err);
        if (app.get_subcommands().empty()) err << app.help();
        return kExitUsage;
    }

    try {
        if (space->parsed()) {
            out << format_space_report(sp_layers, sp_block, sp_keep);
            return kExitOk;
        }
        if (train_teacher_cmd->parsed()) {
            Config cfg = resolve(common, err);
            if (tt_steps) cfg.set("teacher_steps", std::to_string(*tt_steps));
            const TaskData data = task_data(cfg);
            const TeacherResult teacher = train_teacher(data, cfg.teacher_config());
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.6g", teacher.heldout_loss);
            err << "teacher held-out MSE " << buf << '\n';
            if (!teacher.reached_target) {
                err << "warning: held-out MSE did not reach " << kTeacherTargetLoss << '\n';
            }
            write_checkpoint(to_checkpoint(teacher.net), tt_out, err);
            return kExitOk;
        }
        if (learn->parsed()) {
            Config cfg = resolve(common, err);
            if (lm_steps) cfg.set("mask_steps", std::to_string(*lm_steps));
            if (lm_no_activation) cfg.set("activation", "false");
            TrainConfig tc = cfg.train_config();
            tc.validate();
            const LayeredNet teacher = load_net(lm_teacher);
            const TaskData data = task_data(cfg);
            const MaskLearningResult result = train_mask(teacher, data.train, tc);
            const MaskDecision decision =
                decide_mask(result.dist, OptionTable({teacher.n_layers(), tc.block_size, tc.keep}));
            std::string log;
            for (const std::string& line : decision.log) log += line + '\n';
            log += "mask " + decision.mask.to_string() + '\n';
            fs::create_directories(lm_dir);
            write_checkpoint(to_checkpoint(result), fs::path(lm_dir) / "dist.tpkt", err);
            mask_write(decision.mask, fs::path(lm_dir) / "mask.txt");
            write_text_file(fs::path(lm_dir) / "decision.log", log);
            err << log;
            return kExitOk;
        }
        if (prune->parsed()) {
            resolve(common, err);
            const LayeredNet teacher = load_net(pr_teacher);
            const PruneMask mask = mask_read(pr_mask);
            write_checkpoint(to_checkpoint(extract_subnetwork(teacher, mask)), pr_out, err);
            return kExitOk;
        }
        if (finetune->parsed()) {
            Config cfg = resolve(common, err);
            if (ft_steps) cfg.set("finetune_steps", std::to_string(*ft_steps));
            const LayeredNet teacher = load_net(ft_teacher);
            const PruneMask mask = mask_read(ft_mask);
            const TaskData data = task_data(cfg);
            const FinetuneResult result = finetune_student(teacher, mask, data, cfg.finetune_config(), ft_label);
            char buf[128];
            std::snprintf(buf, sizeof buf, "loss_init %.6g loss_final %.6g ratio %.6g\n",
                          result.record.loss_init, result.record.loss_final, result.record.recovery_ratio);
            err << buf;
            write_checkpoint(to_checkpoint(result.student), ft_out, err);
            if (!ft_report.empty()) recoverability_report(std::span(&result.record, 1), ft_report);
            return kExitOk;
        }
        if (baseline->parsed()) {
            Config cfg = resolve(common, err);
            if (bl_strategy != "uniform" && bl_teacher.empty()) {
                throw UsageError("--strategy " + bl_strategy + " needs --teacher");
            }
            StrategyResult result;
            if (bl_strategy == "uniform") {
                const std::size_t n = bl_teacher.empty() ? cfg.get_size("layers") : load_net(bl_teacher).n_layers();
                result = uniform_prune(n, retained(cfg, n), cfg.get_size("uniform_phase"));
            } else {
                const LayeredNet teacher = load_net(bl_teacher);
                const TaskData data = task_data(cfg);
                const std::size_t retain = retained(cfg, teacher.n_layers());
                const std::size_t probe = cfg.get_size("probe_samples");
                if (bl_strategy == "random-min") {
                    result = random_min(teacher, data.heldout.head(probe), retain, cfg.get_size("random_trials"),
                                        cfg.get_size("seed"));
                } else if (bl_strategy == "similarity") {
                    result = similarity_prune(teacher, data.train, retain, probe);
                } else if (bl_strategy == "sensitivity") {
                    result = sensitivity_prune(teacher, data.train, retain, probe);
                } else {
                    TrainConfig tc = cfg.train_config();
                    tc.activation_enabled = false;
                    tc.validate();
                    const OptionTable table({teacher.n_layers(), tc.block_size, tc.keep});
                    const MaskLearningResult learned = train_mask(teacher, data.train, tc);
                    result.mask = decide_mask(learned.dist, table).mask;
                    result.diagnostics = marginal_profile(learned.dist, table).pi;
                }
            }
            mask_write(result.mask, bl_out);
            if (!bl_diag.empty()) write_diagnostics(result, bl_diag);
            err << bl_strategy << " mask " << result.mask.to_string() << '\n';
            return kExitOk;
        }
        if (bench->parsed()) {
            Config cfg = resolve(common, err);
            BenchmarkConfig bc = cfg.benchmark_config();
            bc.strategies = bm_strategies;
            const LayeredNet teacher = load_net(bm_teacher);
            const TaskData data = task_data(cfg);
            std::vector<std::uint64_t> seeds;
            for (std::size_t i = 0; i < bm_seeds; ++i) seeds.push_back(cfg.get_size("seed") + i);
            const std::vector<RecoveryRecord> rows = run_benchmark(teacher, data, bc, seeds, bm_jobs);
            write_report(rows, bm_out);
            err << "wrote " << bm_out << " (" << rows.size() << " rows)\n";
            return kExitOk;
        }
        if (precache->parsed()) {
            Config cfg = resolve(common, err);
            const LayeredNet net = load_net(pc_teacher);
            const Tensor cond = parse_cond(pc_cond.empty() ? cfg.get_string("cache_cond") : pc_cond, net.c);
            const LayeredNet cached = pc_keep_cond ? precache_modulation(net, cond) : strip_conditioning(net, cond);
            err << "parameters " << parameter_count(net) << " -> " << parameter_count(cached) << '\n';
            write_checkpoint(to_checkpoint(cached), pc_out, err);
            return kExitOk;
        }
        if (gradcheck->parsed()) {
            Config cfg = resolve(common, err);
            bool ok = true;
            for (const GradcheckCase& c : run_gradcheck_suite(cfg.get_size("seed"), gc_trials)) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "%-26s %.3e %s\n", c.name.c_str(), c.max_error,
                              c.passed() ? "ok" : "FAIL");
                out << buf;
                ok = ok && c.passed();
            }
            return ok ? kExitOk : kExitRuntime;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const TrainingAborted& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace depthprune
