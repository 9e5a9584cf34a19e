#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "depthprune/baselines.hpp"
#include "depthprune/cli.hpp"
#include "depthprune/errors.hpp"
#include "depthprune/gradcheck_suite.hpp"
#include "depthprune/gumbel.hpp"
#include "depthprune/layered_net.hpp"
#include "depthprune/mask_learning.hpp"
#include "depthprune/ops.hpp"
#include "depthprune/recovery.hpp"
#include "depthprune/report.hpp"

using namespace depthprune;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    std::uint64_t r = 1;
    for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

LayeredNet random_net(Rng& rng, std::size_t n, std::size_t d, std::size_t c) {
    LayeredNet net = init_net(n, d, c, rng.next_u64());
    for (Tensor& p : base_parameters(net)) {
        for (double& v : p.mutable_data()) v = 0.4 * rng.normal();
    }
    return net;
}

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::matrix(r, c, std::move(v));
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.at(i) != b.at(i)) return false;
    }
    return true;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome search_space_numerics() {
    std::ostringstream out, err;
    const int code = run_cli({"space", "--layers", "24", "--block", "4", "--keep", "2"}, out, err);
    std::map<std::string, std::string> fields;
    std::istringstream in(out.str());
    for (std::string key, value; in >> key >> value;) fields[key] = value;
    const double pct = std::stod(fields["fraction"]);
    const bool ok = code == 0 && fields["total"] == "2704156" && fields["valid"] == "46656" &&
                    std::abs(pct - 1.7253) <= 1e-4;
    return {ok, "total " + fields["total"] + ", valid " + fields["valid"] + ", fraction " + fields["fraction"]};
}

Outcome exhaustive_oracle() {
    std::size_t cases = 0, mismatches = 0;
    for (std::size_t n = 1; n <= 12; ++n) {
        for (std::size_t b : {2, 3, 4}) {
            if (n % b) continue;
            for (std::size_t s = 0; s <= b; ++s) {
                const BlockPartition part{n, b, s};
                const std::size_t want_pop = (n / b) * s;
                std::uint64_t total = 0, valid = 0;
                for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
                    if (static_cast<std::size_t>(__builtin_popcount(bits)) != want_pop) continue;
                    ++total;
                    bool ok = true;
                    for (std::size_t j = 0; j < n / b && ok; ++j) {
                        const std::uint32_t block = (bits >> (j * b)) & ((1u << b) - 1);
                        ok = static_cast<std::size_t>(__builtin_popcount(block)) == s;
                    }
                    valid += ok;
                }
                const SubspaceStats st = valid_subspace_stats(part);
                ++cases;
                if (st.total != total || st.valid != valid ||
                    st.fraction != static_cast<double>(valid) / static_cast<double>(total) ||
                    total != binomial(n, want_pop)) {
                    ++mismatches;
                }
            }
        }
    }
    return {mismatches == 0, std::to_string(cases) + " partitions, " + std::to_string(mismatches) + " mismatches"};
}

Outcome gumbel_fidelity() {
    Rng rng(80);
    double worst = 0.0;
    Tape t(false);
    for (int v = 0; v < 10; ++v) {
        const std::size_t n = 2 + rng.below(5);
        std::vector<double> l(n);
        for (double& x : l) x = rng.uniform(-2.0, 2.0);
        const Tensor logits = Tensor::vector(l);
        const Tensor p = ops::softmax_temperature(t, logits, 1.0);
        std::vector<double> freq(n, 0.0);
        for (int i = 0; i < 100000; ++i) {
            const Tensor s = gumbel_softmax(t, {logits, 1.0}, rng);
            freq[std::max_element(s.data().begin(), s.data().end()) - s.data().begin()] += 1e-5;
        }
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(freq[i] - p.at(i)));
    }
    // the dominance clause uses logits [5,0,0] at tau 0.1
    const std::vector<double> peaked{5.0, 0.0, 0.0};
    std::size_t hits = 0;
    for (int i = 0; i < 100000; ++i) {
        const Tensor s = gumbel_softmax(t, {Tensor::vector(peaked), 0.1}, rng);
        hits += std::max_element(s.data().begin(), s.data().end()) == s.data().begin();
    }
    const double dominant = static_cast<double>(hits) / 1e5;
    const double exact = ops::softmax_temperature(t, Tensor::vector(peaked), 1.0).at(0);
    return {worst <= 0.02 && dominant >= 0.99,
            fmt("max |freq - softmax| %.4f; logits [5,0,0] at tau 0.1: dominant frequency %.4f (exact %.4f, needs 0.99)",
                worst, dominant, exact)};
}

Outcome extraction_equivalence() {
    Rng rng(81);
    double worst = 0.0;
    bool projection_exact = true;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(10);
        const std::size_t c = rng.below(2) ? kTaskCondDim : 0;
        LayeredNet net = random_net(rng, n, 4 + rng.below(5), c);
        if (rng.below(2)) {
            attach_deltas(net, 2, 2.0, rng.next_u64());
            for (Tensor& p : delta_parameters(net)) {
                for (double& v : p.mutable_data()) v = 0.2 * rng.normal();
            }
        }
        PruneMask mask(n);
        for (std::size_t i = 0; i < n; ++i) mask.set(i, rng.below(2));
        const Tensor x = random_matrix(rng, 3, kDefaultInDim);
        const Tensor cond = random_matrix(rng, 3, c ? c : 1);
        const Tensor* cp = c ? &cond : nullptr;
        Tape t(false);
        const Tensor gated = forward_gated(t, net, mask.to_tensor(), x, cp);
        const Tensor sub = forward(t, extract_subnetwork(net, mask), x, cp);
        for (std::size_t i = 0; i < gated.size(); ++i) worst = std::max(worst, std::abs(gated.at(i) - sub.at(i)));

        Tensor h = ops::add_row(t, ops::matmul(t, x, net.in_w), net.in_b);
        const Tensor proj = ops::add_row(t, ops::matmul(t, h, net.out_w), net.out_b);
        projection_exact = projection_exact && bit_equal(forward_gated(t, net, Tensor::zeros({n}), x, cp), proj);
    }
    return {worst <= 1e-12 && projection_exact,
            fmt("sup-norm %.3g, all-zero mask projection-only ", worst) + (projection_exact ? "exact" : "differs")};
}

Outcome mask_algebra() {
    Rng rng(82);
    const std::vector<BlockPartition> parts{{12, 4, 2}, {12, 4, 1}, {12, 4, 3}, {12, 6, 3}, {9, 3, 1}, {15, 5, 2}};
    std::size_t checked = 0, failures = 0;
    while (checked < 1000) {
        const BlockPartition& part = parts[rng.below(parts.size())];
        const OptionTable table(part);
        std::vector<std::size_t> choices(part.blocks());
        for (auto& c : choices) c = rng.below(table.size());
        const PruneMask m = compose_mask(choices, table);
        MarginalProfile pi{std::vector<double>(part.n_layers)};
        for (double& p : pi.pi) p = rng.uniform();
        const std::size_t block = rng.below(part.blocks());
        const std::size_t k = 1 + rng.below(2);
        const bool expand = rng.below(2);
        if (expand ? part.block_size - part.keep < k : part.keep < k) continue;
        ++checked;
        Tape t(false);
        if (expand) {
            const auto e = build_expansion_candidate(t, m.to_tensor(), pi, part, block, k);
            const PruneMask plus = PruneMask::from_tensor(e.m_plus);
            PruneMask orr = m;
            for (std::size_t i = 0; i < m.size(); ++i) orr.set(i, m[i] || e.m_hat[i]);
            failures += !(orr.popcount() - m.popcount() == k && orr == plus && !in_valid_subspace(plus, part));
        } else {
            const auto c = build_corrosion_candidate(t, m.to_tensor(), pi, part, block, k);
            const PruneMask minus = PruneMask::from_tensor(c.m_minus);
            PruneMask andd = m;
            for (std::size_t i = 0; i < m.size(); ++i) andd.set(i, m[i] && c.m_hat[i]);
            failures += !(m.popcount() - andd.popcount() == k && andd == minus && !in_valid_subspace(minus, part));
        }
    }
    return {failures == 0, std::to_string(checked) + " feasible cases, " + std::to_string(failures) + " failures"};
}

Outcome conservation_and_reachability() {
    Rng rng(83);
    std::size_t draws = 0, bad = 0;
    for (const BlockPartition& part : {BlockPartition{12, 4, 2}, BlockPartition{12, 4, 1}, BlockPartition{16, 4, 3},
                                       BlockPartition{12, 3, 2}}) {
        const OptionTable table(part);
        PruningDistribution dist = PruningDistribution::uniform(part);
        for (Tensor& l : dist.block_logits) {
            for (double& v : l.mutable_data()) v = rng.uniform(-2.0, 2.0);
        }
        for (Tensor& l : dist.transform_logits) {
            for (double& v : l.mutable_data()) v = rng.uniform(-2.0, 2.0);
        }
        const MarginalProfile pi = marginal_profile(dist, table);
        for (int i = 0; i < 2000; ++i, ++draws) {
            Tape t;
            const PruneMask m = PruneMask::from_tensor(sample_training_mask(t, dist, table, pi, rng, true).mask);
            bad += m.popcount() != part.blocks() * part.keep;
        }
    }
    const BlockPartition part{12, 4, 2};
    const OptionTable table(part);
    const PruningDistribution uni = PruningDistribution::uniform(part);
    const MarginalProfile pi = marginal_profile(uni, table);
    std::size_t first_outside = 0;
    for (std::size_t i = 1; i <= 1000 && !first_outside; ++i) {
        Tape t;
        if (!in_valid_subspace(PruneMask::from_tensor(sample_training_mask(t, uni, table, pi, rng, true).mask), part)) {
            first_outside = i;
        }
    }
    return {bad == 0 && first_outside > 0,
            std::to_string(draws) + " draws with " + std::to_string(bad) + " budget violations, first mask outside the valid subspace at draw " +
                std::to_string(first_outside)};
}

Outcome gradient_suite() {
    double worst = 0.0;
    std::string worst_name;
    std::size_t n = 0;
    for (const GradcheckCase& c : run_gradcheck_suite(80, 20)) {
        ++n;
        if (c.max_error >= worst) {
            worst = c.max_error;
            worst_name = c.name;
        }
    }
    return {worst < kGradcheckTolerance, std::to_string(n) + " cases, max relative error " + fmt("%.3g", worst) + " (" + worst_name + ")"};
}

Outcome precache_exact() {
    Rng rng(84);
    LayeredNet net = random_net(rng, 12, 16, kTaskCondDim);
    std::vector<double> cv(kTaskCondDim);
    for (double& v : cv) v = rng.uniform(-1.0, 1.0);
    const Tensor c = Tensor::vector(cv);
    const LayeredNet cached = precache_modulation(net, c);
    const LayeredNet stripped = strip_conditioning(net, c);
    std::size_t mismatches = 0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t rows = 1 + rng.below(4);
        const Tensor x = random_matrix(rng, rows, kDefaultInDim);
        std::vector<double> cr;
        for (std::size_t r = 0; r < rows; ++r) cr.insert(cr.end(), cv.begin(), cv.end());
        const Tensor cond = Tensor::matrix(rows, kTaskCondDim, cr);
        Tape t(false);
        const Tensor want = forward(t, net, x, &cond);
        mismatches += !bit_equal(forward(t, cached, x, nullptr), want);
        mismatches += !bit_equal(forward(t, stripped, x, nullptr), want);
    }
    return {mismatches == 0, "200 comparisons, " + std::to_string(mismatches) + " not bit-identical"};
}

Outcome recoverability_ordering() {
    const TaskData data = make_task_data(80);
    const auto t0 = Clock::now();
    const TeacherResult teacher = train_teacher(data, TeacherConfig{});
    std::string detail = fmt("teacher held-out loss %.4f (%.0fs); ", teacher.heldout_loss, seconds_since(t0));

    BenchmarkConfig cfg;
    cfg.strategies = {"learned", "random-min", "similarity", "uniform"};
    const std::vector<std::uint64_t> seeds{80, 81, 82, 83, 84};
    const auto records = run_benchmark(teacher.net, data, cfg, seeds, 1);
    std::map<std::string, std::vector<double>> finals;
    for (const RecoveryRecord& r : records) finals[r.strategy].push_back(r.loss_final);
    std::vector<double> pooled = finals["uniform"];
    pooled.insert(pooled.end(), finals["similarity"].begin(), finals["similarity"].end());

    const double learned = median(finals["learned"]);
    const double heuristic = median(pooled);
    const double random = median(finals["random-min"]);
    const bool a = learned <= heuristic;
    const bool b = learned <= 1.05 * random;
    detail += fmt("median loss_final learned %.5f, uniform+similarity %.5f, random-min %.5f", learned, heuristic, random);
    detail += std::string("; (a) ") + (a ? "holds" : "fails") + ", (b) " + (b ? "holds" : "fails");
    detail += "; learned per seed";
    for (double v : finals["learned"]) detail += fmt(" %.5f", v);
    detail += fmt(" (%.0fs)", seconds_since(t0));
    return {a && b, detail};
}

Outcome ablation_reduction() {
    Rng logit_rng(85);
    std::size_t differing = 0, configs = 0;
    for (std::size_t keep : {1, 2, 3}) {
        const BlockPartition part{12, 4, keep};
        const OptionTable table(part);
        PruningDistribution dist = PruningDistribution::uniform(part);
        for (Tensor& l : dist.block_logits) {
            for (double& v : l.mutable_data()) v = logit_rng.uniform(-1.5, 1.5);
        }
        for (Tensor& l : dist.transform_logits) {
            for (double& v : l.mutable_data()) v = logit_rng.uniform(-1.5, 1.5);
        }
        const MarginalProfile pi = marginal_profile(dist, table);
        std::map<std::string, std::size_t> learned, reference;
        Rng a(80 + keep), b(80 + keep);
        for (int i = 0; i < 10000; ++i) {
            Tape t;
            ++learned[PruneMask::from_tensor(sample_training_mask(t, dist, table, pi, a, false).mask).to_string()];

            // independent product-of-categoricals sampler, Gumbel-max per block
            std::string mask;
            for (const Tensor& l : dist.block_logits) {
                std::size_t best = 0;
                double best_v = -INFINITY;
                for (std::size_t o = 0; o < l.size(); ++o) {
                    const double v = l.at(o) + gumbel_from_uniform(b.uniform());
                    if (v > best_v) {
                        best_v = v;
                        best = o;
                    }
                }
                for (auto bit : table.option(best)) mask += bit ? '1' : '0';
            }
            ++reference[mask];
        }
        ++configs;
        differing += learned != reference;
    }
    return {differing == 0, std::to_string(configs) + " retention ratios (s = 1, 2, 3 of 4), " +
                                std::to_string(differing) + " histograms differ"};
}

Outcome cli_determinism() {
    const fs::path root = fs::temp_directory_path() / "depthprune_acceptance_cli";
    fs::remove_all(root);
    const std::vector<std::string> small{"--set", "layers=8", "--set", "d=8", "--set", "train_samples=256"};
    auto with = [&](std::vector<std::string> args) {
        args.insert(args.end(), small.begin(), small.end());
        return args;
    };
    auto run_all = [&](const fs::path& dir) {
        fs::create_directories(dir);
        auto p = [&](const char* name) { return (dir / name).string(); };
        std::ostringstream space_out, err;
        bool ok = run_cli({"space", "--layers", "24", "--block", "4", "--keep", "2"}, space_out, err) == 0;
        write_text_file(dir / "space.txt", space_out.str());
        const std::vector<std::vector<std::string>> cmds{
            with({"train-teacher", "--out", p("teacher.tpkt"), "--steps", "200"}),
            with({"learn-mask", "--teacher", p("teacher.tpkt"), "--out-dir", p("learned"), "--steps", "50"}),
            with({"learn-mask", "--teacher", p("teacher.tpkt"), "--out-dir", p("blocklocal"), "--steps", "50",
                  "--no-activation"}),
            with({"prune", "--teacher", p("teacher.tpkt"), "--mask", p("learned/mask.txt"), "--out", p("pruned.tpkt")}),
            with({"finetune", "--teacher", p("teacher.tpkt"), "--mask", p("learned/mask.txt"), "--out",
                  p("student.tpkt"), "--report", p("finetune.csv"), "--steps", "50"}),
            with({"baseline", "--strategy", "random-min", "--teacher", p("teacher.tpkt"), "--out", p("rm.txt"),
                  "--diagnostics", p("rm.csv")}),
            with({"baseline", "--strategy", "similarity", "--teacher", p("teacher.tpkt"), "--out", p("sim.txt"),
                  "--diagnostics", p("sim.csv")}),
            with({"baseline", "--strategy", "sensitivity", "--teacher", p("teacher.tpkt"), "--out", p("sens.txt"),
                  "--diagnostics", p("sens.csv")}),
            with({"baseline", "--strategy", "uniform", "--out", p("uni.txt"), "--diagnostics", p("uni.csv")}),
            with({"baseline", "--strategy", "block-local", "--teacher", p("teacher.tpkt"), "--out", p("bl.txt"),
                  "--set", "mask_steps=30"}),
            with({"benchmark", "--teacher", p("teacher.tpkt"), "--out", p("bench.csv"), "--seeds", "2", "--jobs", "2",
                  "--set", "mask_steps=30", "--set", "finetune_steps=30"}),
            with({"precache", "--teacher", p("teacher.tpkt"), "--out", p("cached.tpkt")}),
        };
        for (const auto& cmd : cmds) {
            std::ostringstream out, e;
            ok = run_cli(cmd, out, e) == 0 && ok;
        }
        std::ostringstream gc, e;
        run_cli({"gradcheck", "--trials", "2"}, gc, e);
        write_text_file(dir / "gradcheck.txt", gc.str());
        return ok;
    };
    const bool ok1 = run_all(root / "a");
    const bool ok2 = run_all(root / "b");
    std::size_t files = 0, differ = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
        if (!entry.is_regular_file()) continue;
        ++files;
        const fs::path other = root / "b" / fs::relative(entry.path(), root / "a");
        differ += !fs::exists(other) || read_text_file(entry.path()) != read_text_file(other);
    }
    fs::remove_all(root);
    return {ok1 && ok2 && differ == 0 && files > 0,
            std::to_string(files) + " output files, " + std::to_string(differ) + " differ" +
                (ok1 && ok2 ? "" : ", a command failed")};
}

}  // namespace

int main(int argc, char** argv) {
    // --allow-fail N: criterion N still reports FAIL but does not set the exit status
    // --only N: run just the listed criteria
    std::vector<std::size_t> allowed, only;
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string flag = argv[i];
        if (flag == "--allow-fail") allowed.push_back(std::stoul(argv[i + 1]));
        if (flag == "--only") only.push_back(std::stoul(argv[i + 1]));
    }
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"search-space numerics", search_space_numerics},
        {"exhaustive combinatorial oracle", exhaustive_oracle},
        {"gumbel-softmax fidelity", gumbel_fidelity},
        {"gated forward vs extracted subnetwork", extraction_equivalence},
        {"expansion/corrosion mask algebra", mask_algebra},
        {"transformation conservation and reachability", conservation_and_reachability},
        {"gradient suite", gradient_suite},
        {"pre-cache bit-exactness", precache_exact},
        {"recoverability ordering", recoverability_ordering},
        {"ablation reduction", ablation_reduction},
        {"cli determinism", cli_determinism},
    };
    int failed = 0, tolerated = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && std::find(only.begin(), only.end(), i + 1) == only.end()) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %zu %s: %s -- %s [%.1fs]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first,
                    o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
        if (!o.pass) {
            ++(std::find(allowed.begin(), allowed.end(), i + 1) != allowed.end() ? tolerated : failed);
        }
    }
    std::printf("%d of %zu criteria failed (%d of them listed with --allow-fail)\n", failed + tolerated,
                criteria.size(), tolerated);
    return failed ? 1 : 0;
}
