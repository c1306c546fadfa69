// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "nvfg/checkpoint.hpp"
#include "nvfg/commands.hpp"
#include "nvfg/errors.hpp"
#include "nvfg/experiment.hpp"
#include "nvfg/losses.hpp"
#include "test_support.hpp"

using namespace nvfg;
using nvfg::testing::max_rel_err;
using nvfg::testing::random_tensor;
using nvfg::testing::rel_err;
using nvfg::testing::TempDir;

namespace {

const std::string kBenchmark = std::string(NVFG_DATA_DIR) + "/benchmark.json";

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
    return buf;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Straightforward scalar membership loss, independent of the library's.
double membership_oracle(const std::vector<double>& f, int y, double lambda) {
    auto sig = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
    double wrong = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (static_cast<int>(i) != y) wrong += sig(f[i]) * sig(f[i]);
    }
    const double miss = 1.0 - sig(f[static_cast<std::size_t>(y)]);
    return miss * miss + lambda / static_cast<double>(f.size() - 1) * wrong;
}

Outcome membership_gradient() {
    Rng rng(101);
    const double h = 1e-6;
    double worst = 0.0;
    std::size_t vectors = 0;
    for (std::size_t c : {2, 5, 10}) {
        for (double lambda : {1.0, 5.0}) {
            for (int trial = 0; trial < 10; ++trial, ++vectors) {
                std::vector<double> f(c);
                for (double& v : f) v = rng.uniform(-4.0, 4.0);
                const int y = static_cast<int>(rng.below(c));
                const LossResult r = membership_loss(Tensor(Shape{1, c}, f), y, MembershipParams{lambda});
                for (std::size_t i = 0; i < c; ++i) {
                    auto up = f, down = f;
                    up[i] += h;
                    down[i] -= h;
                    const double numeric =
                        (membership_oracle(up, y, lambda) - membership_oracle(down, y, lambda)) / (2.0 * h);
                    worst = std::max(worst, rel_err(r.grad[i], numeric));
                }
            }
        }
    }
    return {vectors >= 50 && worst < 1e-5, fmt("%.0f vectors, max rel err %.2e", static_cast<double>(vectors), worst)};
}

Outcome end_to_end_gradient() {
    const NetworkSpec backbone{{2, 5, 5},
                               {LayerSpec::conv2d(2, 3, 2), LayerSpec::relu(), LayerSpec::conv2d(3, 4, 2),
                                LayerSpec::relu(), LayerSpec::global_avg_pool()}};
    const DualBranchModel model = build_dual_model(backbone, 3, 4, 21);
    Rng rng(22);
    LabeledBatch known{random_tensor({5, 2, 5, 5}, rng), {0, 1, 2, 1, 0}};
    LabeledBatch reference{random_tensor({4, 2, 5, 5}, rng), {3, 0, 2, 1}};
    TrainingConfig cfg;
    cfg.mode = TrainingMode::dual_full;
    const StepGradients g = compute_step_gradients(model, known, &reference, cfg);

    auto loss_with = [&](auto patch) {
        return [&, patch](const ParamSet& p) {
            DualBranchModel probe = model;
            patch(probe, p);
            return compute_step_gradients(probe, known, &reference, cfg).metrics.total;
        };
    };
    const double h = 1e-6;
    const double e_backbone = max_rel_err(
        g.backbone,
        finite_difference_grad(loss_with([](DualBranchModel& m, const ParamSet& p) { m.backbone.params = p; }),
                               model.backbone.params, h));
    const double e_known = max_rel_err(
        g.head_known,
        finite_difference_grad(loss_with([](DualBranchModel& m, const ParamSet& p) { m.head_known.params = p; }),
                               model.head_known.params, h));
    const double e_reference = max_rel_err(
        g.head_reference, finite_difference_grad(loss_with([](DualBranchModel& m, const ParamSet& p) {
                                                     m.head_reference->params = p;
                                                 }),
                                                 model.head_reference->params, h));
    const double worst = std::max({e_backbone, e_known, e_reference});
    return {worst < 1e-5, fmt("max rel err backbone %.2e, known head %.2e, reference head %.2e", e_backbone,
                              e_known, e_reference)};
}

Outcome auc_oracle() {
    Rng rng(303);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto draw = [&](std::size_t n) {
            std::vector<double> v(n);
            // Every other set lives on a coarse grid so ties are frequent.
            for (double& x : v) x = trial % 2 ? rng.normal() : static_cast<double>(rng.below(10)) / 4.0;
            return v;
        };
        const auto known = draw(1 + rng.below(200));
        const auto novel = draw(1 + rng.below(200));
        worst = std::max(worst, std::abs(roc_auc(known, novel).auc - auc_pairwise_oracle(known, novel)));
    }
    return {worst <= 1e-12, fmt("100 sets, max |trapezoid - pairwise| %.1e", worst)};
}

Outcome known_values() {
    const double lm = membership_loss(Tensor(Shape{1, 3}), 0).value;
    double ce_err = 0.0;
    for (std::size_t c : {2, 3, 10, 100}) {
        const Tensor uniform(Shape{1, c}, 0.7);
        ce_err = std::max(ce_err, std::abs(cross_entropy(uniform, 1).value - std::log(static_cast<double>(c))));
    }
    std::vector<double> scores;
    for (int i = 1; i <= 100; ++i) scores.push_back(i);
    const NoveltyThreshold t = calibrate_threshold(scores, 0.05);
    const bool pass = std::abs(lm - 1.5) < 1e-12 && ce_err < 1e-12 && t.gamma == 5.0 &&
                      std::abs(t.realized_fnr - 0.04) < 1e-15;
    return {pass, fmt("L_M %.15g, max |CE - ln c| %.1e, gamma %g, realized FNR %g", lm, ce_err, t.gamma,
                      t.realized_fnr)};
}

// First n samples as one batch in the network's input layout.
Tensor probe_batch(const Dataset& d, std::size_t n, const NetworkSpec& backbone) {
    Shape shape{n};
    shape.insert(shape.end(), backbone.input_shape.begin(), backbone.input_shape.end());
    return stack(std::span(d.samples).first(n)).reshaped(shape);
}

struct Benchmark {
    ExperimentConfig config;
    ExperimentData data;
};

Outcome weight_sharing(const Benchmark& b) {
    TrainingConfig cfg = b.config.training;
    cfg.mode = TrainingMode::dual_full;
    const Tensor probe = probe_batch(b.data.novel, 50, b.config.backbone);
    std::size_t epochs = 0, identical = 0;
    train_experiment(b.data, b.config.backbone, cfg, [&](const DualBranchModel& m, const EpochRecord&) {
        ++epochs;
        identical += m.known_branch_features(probe) == m.reference_branch_features(probe);
    });
    return {epochs == cfg.epochs && identical == epochs,
            fmt("%.0f of %.0f epochs with bitwise-identical branch features", static_cast<double>(identical),
                static_cast<double>(epochs))};
}

struct ModeMeans {
    double auc = 0.0;
    double accuracy = 0.0;
};

ModeMeans mean_of(const std::vector<AblationRow>& rows, TrainingMode mode) {
    ModeMeans m;
    std::size_t n = 0;
    for (const AblationRow& r : rows) {
        if (r.mode != mode) continue;
        m.auc += r.auc;
        m.accuracy += r.accuracy;
        ++n;
    }
    m.auc /= static_cast<double>(n);
    m.accuracy /= static_cast<double>(n);
    return m;
}

Outcome checkpoint_round_trip(const Benchmark& b) {
    Checkpoint c;
    c.config = b.config.training;
    c.config.epochs = 3;
    c.model = train_experiment(b.data, b.config.backbone, c.config).model;
    c.epoch = 3;
    const std::string bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    const Tensor probe = probe_batch(b.data.test, 40, b.config.backbone);
    const bool same = back.model.backbone.params == c.model.backbone.params &&
                      back.model.head_known.params == c.model.head_known.params &&
                      back.model.head_reference->params == c.model.head_reference->params &&
                      back.model.known_logits(probe) == c.model.known_logits(probe) &&
                      encode_checkpoint(back) == bytes;
    std::string damaged = bytes;
    damaged[1] = static_cast<char>(damaged[1] ^ 0x20);
    bool rejected = false;
    try {
        decode_checkpoint(damaged);
    } catch (const FormatError&) {
        rejected = true;
    }
    return {same && rejected, std::string("round trip ") + (same ? "bitwise" : "differs") + ", corrupted magic " +
                                  (rejected ? "rejected" : "accepted")};
}

Outcome train_determinism() {
    TempDir dir("acceptance_train");
    CommandOptions opts;
    opts.config = kBenchmark;
    opts.out = dir / "first";
    const TrainOutputs first = cmd_train(opts);
    opts.out = dir / "second";
    const TrainOutputs second = cmd_train(opts);
    const std::string a = slurp(first.checkpoint), b = slurp(second.checkpoint);
    return {!a.empty() && a == b, fmt("%.0f-byte checkpoints ", static_cast<double>(a.size())) +
                                      (a == b ? "identical" : "differ")};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& check, double budget_s) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = budget_s <= 0.0 || secs < budget_s;
        if (!in_time) o.detail += fmt("; over the %.0f s budget", budget_s);
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::printf("criterion %2d %s: %s (%s) [%.2f s]\n", id, pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
        std::fflush(stdout);
    };

    report(1, "membership gradient", membership_gradient, 1.0);
    report(2, "end-to-end gradient", end_to_end_gradient, 30.0);
    report(3, "auc oracle", auc_oracle, 5.0);
    report(4, "known values", known_values, 0.0);

    Benchmark bench{load_experiment_config(kBenchmark), {}};
    bench.data = assemble_experiment(bench.config.dataset);
    report(5, "weight sharing", [&] { return weight_sharing(bench); }, 0.0);

    const std::vector<TrainingMode>& modes = bench.config.evaluation.ablation_modes;
    const std::size_t seeds = bench.config.evaluation.ablation_seeds;
    std::vector<AblationRow> rows;
    report(6, "ablation ordering", [&] {
        rows = run_ablation(bench.data, bench.config.backbone, bench.config.training, modes, seeds);
        const double ce = mean_of(rows, TrainingMode::ce_only).auc;
        const double cm = mean_of(rows, TrainingMode::ce_membership).auc;
        const double dc = mean_of(rows, TrainingMode::dual_ce).auc;
        const double df = mean_of(rows, TrainingMode::dual_full).auc;
        const bool pass = seeds == 10 && df >= std::max(cm, dc) && std::min(cm, dc) >= ce && df - ce >= 0.01;
        return Outcome{pass, fmt("mean AUC ce-only %.4f, ce+membership %.4f, dual-ce %.4f, dual-full %.4f", ce, cm,
                                 dc, df)};
    }, 600.0);
    report(7, "accuracy non-degradation", [&] {
        if (rows.empty()) return Outcome{false, "no ablation rows"};
        const double ce = mean_of(rows, TrainingMode::ce_only).accuracy;
        const double df = mean_of(rows, TrainingMode::dual_full).accuracy;
        return Outcome{df >= ce - 0.02, fmt("mean accuracy ce-only %.4f, dual-full %.4f", ce, df)};
    }, 0.0);
    report(8, "reference diversity", [&] {
        if (rows.empty()) return Outcome{false, "no ablation rows"};
        DatasetSection narrow = bench.config.dataset;
        if (!narrow.benchmark) return Outcome{false, "benchmark config has no generated dataset"};
        narrow.benchmark->layout.reference_clusters = 2;
        const ExperimentData data2 = assemble_experiment(narrow);
        const std::vector<TrainingMode> full{TrainingMode::dual_full};
        const double auc2 =
            mean_of(run_ablation(data2, bench.config.backbone, bench.config.training, full, seeds),
                    TrainingMode::dual_full).auc;
        const double auc8 = mean_of(rows, TrainingMode::dual_full).auc;
        return Outcome{auc8 >= auc2 - 0.005, fmt("dual-full mean AUC with 8 reference clusters %.4f, with 2 %.4f",
                                                 auc8, auc2)};
    }, 0.0);
    report(9, "checkpoint round trip", [&] { return checkpoint_round_trip(bench); }, 0.0);
    report(10, "train determinism", train_determinism, 0.0);

    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
