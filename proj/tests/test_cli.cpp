#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "nvfg/checkpoint.hpp"
#include "nvfg/commands.hpp"
#include "nvfg/errors.hpp"
#include "nvfg/file_util.hpp"
#include "nvfg/filter_analysis.hpp"
#include "test_support.hpp"

using namespace nvfg;
using nvfg::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kToyDir = fs::path(NVFG_DATA_DIR) / "toy";

struct Run {
    int status = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs the nvfg binary with stdout and stderr captured to files in `dir`.
Run run_cli(const TempDir& dir, const std::string& args) {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + NVFG_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int raw = std::system(cmd.c_str());
    Run r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

Json toy_doc() {
    Json doc = Json::parse(slurp(kToyDir / "toy.json"));
    doc["dataset"]["labeled"]["path"] = (kToyDir / "labeled.csv").string();
    doc["dataset"]["reference"]["path"] = (kToyDir / "reference.csv").string();
    return doc;
}

// Writes a variant of the toy config into `dir` and returns its path.
fs::path write_config(const TempDir& dir, const Json& doc, const std::string& name = "config.json") {
    const fs::path p = dir / name;
    std::ofstream(p) << doc.dump(2);
    return p;
}

CommandOptions options(const fs::path& config, const fs::path& out) {
    CommandOptions o;
    o.config = config;
    o.out = out;
    return o;
}

std::size_t count_files(const fs::path& dir) {
    if (!fs::exists(dir)) return 0;
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

}  // namespace

TEST_CASE("train with zero epochs stores the initialization") {
    TempDir dir("cli_init");
    Json doc = toy_doc();
    doc["training"]["epochs"] = 0;
    const fs::path cfg_path = write_config(dir, doc);

    const Run r = run_cli(dir, "train --config " + quoted(cfg_path) + " --out " + quoted(dir / "run"));
    REQUIRE(r.status == 0);
    CHECK(r.out.find("checkpoint.nvfg") != std::string::npos);

    const ExperimentConfig cfg = load_experiment_config(cfg_path);
    const ExperimentData data = assemble_experiment(cfg.dataset);
    const DualBranchModel init = build_dual_model(cfg.backbone, data.train.num_classes(),
                                                  data.reference->num_classes(), cfg.training.seed);
    const Checkpoint ckpt = load_checkpoint(dir / "run" / "checkpoint.nvfg");
    CHECK(ckpt.epoch == 0);
    CHECK(ckpt.model.backbone.params == init.backbone.params);
    CHECK(ckpt.model.head_known.params == init.head_known.params);
    REQUIRE(ckpt.model.head_reference.has_value());
    CHECK(ckpt.model.head_reference->params == init.head_reference->params);
    CHECK(slurp(dir / "run" / "history.csv") == "epoch,ce_reference,ce_known,membership_known,total\n");
}

TEST_CASE("missing dataset file fails with the path in the message") {
    TempDir dir("cli_missing");
    Json doc = toy_doc();
    const std::string missing = (dir / "nowhere.csv").string();
    doc["dataset"]["labeled"]["path"] = missing;
    const fs::path cfg_path = write_config(dir, doc);

    const Run r = run_cli(dir, "train --config " + quoted(cfg_path) + " --out " + quoted(dir / "run"));
    CHECK(r.status != 0);
    CHECK(r.err.find(missing) != std::string::npos);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    CHECK(count_files(dir / "run") == 0);
}

TEST_CASE("training twice gives identical checkpoints") {
    TempDir dir("cli_det");
    const fs::path cfg = kToyDir / "toy.json";
    REQUIRE(run_cli(dir, "train --config " + quoted(cfg) + " --out " + quoted(dir / "a")).status == 0);
    REQUIRE(run_cli(dir, "train --config " + quoted(cfg) + " --out " + quoted(dir / "b")).status == 0);
    const std::string a = slurp(dir / "a" / "checkpoint.nvfg");
    CHECK(!a.empty());
    CHECK(a == slurp(dir / "b" / "checkpoint.nvfg"));
    CHECK(slurp(dir / "a" / "history.csv") == slurp(dir / "b" / "history.csv"));

    // A different seed moves the weights.
    REQUIRE(run_cli(dir, "train --config " + quoted(cfg) + " --seed 12 --out " + quoted(dir / "c")).status == 0);
    CHECK(a != slurp(dir / "c" / "checkpoint.nvfg"));
}

TEST_CASE("eval summary agrees with the emitted scores") {
    TempDir dir("cli_eval");
    const fs::path cfg = kToyDir / "toy.json";
    const TrainOutputs trained = cmd_train(options(cfg, dir / "train"));

    CommandOptions o = options(cfg, dir / "eval");
    o.checkpoint = trained.checkpoint;
    const EvalOutputs ev = cmd_eval(o);

    std::vector<double> known, novel;
    std::size_t correct = 0, known_count = 0;
    for (const ScoreRecord& r : read_score_report(ev.scores)) {
        (r.is_novel ? novel : known).push_back(r.score);
        if (!r.is_novel) {
            ++known_count;
            correct += r.predicted_class == r.true_class;
        }
    }
    const double recomputed = auc_pairwise_oracle(known, novel);
    const Json summary = Json::parse(slurp(ev.summary));
    CHECK(std::abs(summary.at("auc").get<double>() - recomputed) <= 5e-5);
    CHECK(summary.at("accuracy").get<double>() ==
          static_cast<double>(correct) / static_cast<double>(known_count));
    CHECK(summary.at("known_test_samples") == known.size());
    CHECK(summary.at("novel_samples") == novel.size());
    CHECK(summary.at("mode") == "dual-full");

    const std::string roc = slurp(ev.roc);
    CHECK(roc.rfind("threshold,fpr,tpr\n", 0) == 0);
    CHECK(roc.find("auc,") != std::string::npos);
}

TEST_CASE("separable scores give auc 1") {
    TempDir dir("cli_sep");
    // Known rows sit on large positive values of their own feature, novel rows
    // are all zero; an identity network scores them perfectly apart.
    std::ofstream known(dir / "known.csv");
    known << "label,f0,f1\n";
    for (int i = 0; i < 6; ++i) known << "a," << 5 + i << ",0\nb,0," << 5 + i << "\n";
    known.close();
    std::ofstream(dir / "novel.csv") << "label,f0,f1\nz,0,0\nz,0.5,0.5\n";

    Json doc = toy_doc();
    doc["dataset"] = {{"known", {{"format", "csv"}, {"path", (dir / "known.csv").string()}}},
                      {"novel", {{"format", "csv"}, {"path", (dir / "novel.csv").string()}}}};
    doc["model"]["backbone"] = {{"input_shape", {2}}, {"layers", {{{"kind", "dense"}, {"out", 2}}}}};
    doc["training"]["mode"] = "ce-only";
    const fs::path cfg_path = write_config(dir, doc);

    Checkpoint c;
    c.model = build_dual_model(network_spec_from_json(doc["model"]["backbone"]), 2, 0, 1);
    c.model.backbone.params = c.model.backbone.params.zeros_like();
    c.model.head_known.params = c.model.head_known.params.zeros_like();
    for (std::size_t i = 0; i < 2; ++i) {
        c.model.backbone.params["L0.weight"].at({i, i}) = 1.0;
        c.model.head_known.params["L0.weight"].at({i, i}) = 1.0;
    }
    save_checkpoint(c, dir / "identity.nvfg");

    CommandOptions o = options(cfg_path, dir / "eval");
    o.checkpoint = dir / "identity.nvfg";
    const EvalOutputs ev = cmd_eval(o);
    CHECK(ev.auc == 1.0);
    CHECK(ev.accuracy == 1.0);
    CHECK(Json::parse(slurp(ev.summary)).at("auc") == 1.0);
}

TEST_CASE("eval protocol errors") {
    TempDir dir("cli_proto");
    const fs::path cfg = kToyDir / "toy.json";
    Json doc = toy_doc();
    doc["training"]["epochs"] = 1;
    const TrainOutputs trained = cmd_train(options(write_config(dir, doc), dir / "train"));

    SUBCASE("no novel samples") {
        const Checkpoint ckpt = load_checkpoint(trained.checkpoint);
        const ExperimentData data = assemble_experiment(load_experiment_config(cfg).dataset);
        CHECK_THROWS_AS(evaluate(ckpt.model, data.test, Dataset{}), ProtocolError);

        Json all_known = toy_doc();
        all_known["dataset"]["split"]["known_fraction"] = 0.99;
        const Run r = run_cli(dir, "eval --config " + quoted(write_config(dir, all_known, "all_known.json")) +
                                       " --checkpoint " + quoted(trained.checkpoint) + " --out " +
                                       quoted(dir / "eval"));
        CHECK(r.status == 1);
        CHECK(r.err.rfind("nvfg: ", 0) == 0);
        CHECK(count_files(dir / "eval") == 0);
    }
    SUBCASE("class count mismatch") {
        Json four = toy_doc();
        four["dataset"]["split"]["known_fraction"] = 0.8;
        CommandOptions o = options(write_config(dir, four, "four.json"), dir / "eval");
        o.checkpoint = trained.checkpoint;
        CHECK_THROWS_AS(cmd_eval(o), ProtocolError);
        CHECK(count_files(dir / "eval") == 0);
    }
}

TEST_CASE("ablate rows") {
    TempDir dir("cli_ablate");
    Json doc = toy_doc();
    doc["training"]["epochs"] = 1;
    const fs::path cfg_path = write_config(dir, doc);

    CommandOptions one = options(cfg_path, dir / "one");
    one.mode = "dual-ce";
    one.seeds = 1;
    const AblateOutputs single = cmd_ablate(one);
    CHECK(single.results.size() == 1);
    const std::string rows = slurp(single.rows);
    CHECK(std::count(rows.begin(), rows.end(), '\n') == 2);
    CHECK(rows.find(",dual-ce,") != std::string::npos);

    const AblateOutputs all = cmd_ablate(options(cfg_path, dir / "all"));
    CHECK(all.results.size() == 4 * 2);
    const std::string table = slurp(all.rows);
    CHECK(std::count(table.begin(), table.end(), '\n') == 1 + 8);
    for (std::size_t i = 0; i < all.results.size(); ++i) {
        const AblationRow& r = all.results[i];
        CHECK(r.seed == ablation_seed(11, r.seed_index, static_cast<std::size_t>(r.mode)));
    }
    // Each row can be reproduced on its own.
    const AblationRow& pick = all.results[5];
    CommandOptions solo = options(cfg_path, dir / "solo");
    solo.mode = to_string(pick.mode);
    solo.seeds = pick.seed_index + 1;
    const AblateOutputs again = cmd_ablate(solo);
    CHECK(again.results.back().auc == pick.auc);
    CHECK(again.results.back().accuracy == pick.accuracy);

    const std::string summary = slurp(all.summary);
    CHECK(summary.rfind("mode,seeds,mean_auc,mean_accuracy\nce-only,2,", 0) == 0);

    Json no_ref = doc;
    no_ref["dataset"].erase("reference");
    CHECK_THROWS_AS(cmd_ablate(options(write_config(dir, no_ref, "noref.json"), dir / "noref")), ConfigError);
    CHECK(count_files(dir / "noref") == 0);
}

TEST_CASE("calibrate") {
    TempDir dir("cli_cal");
    Json doc = toy_doc();
    doc["training"]["epochs"] = 2;
    const fs::path cfg_path = write_config(dir, doc);
    const TrainOutputs trained = cmd_train(options(cfg_path, dir / "train"));

    const Checkpoint ckpt = load_checkpoint(trained.checkpoint);
    const ExperimentData data = assemble_experiment(load_experiment_config(cfg_path).dataset);
    std::vector<double> scores;
    for (const ScoreRecord& r : score_dataset(ckpt.model, data.test, false)) scores.push_back(r.score);
    std::sort(scores.begin(), scores.end());
    const double n = static_cast<double>(scores.size());

    for (double target : {0.05, 0.5}) {
        CommandOptions o = options(cfg_path, dir / "cal");
        o.checkpoint = trained.checkpoint;
        o.target_fnr = target;
        const Json t = Json::parse(slurp(cmd_calibrate(o)));
        const auto k = static_cast<std::size_t>(std::ceil(target * n));
        CHECK(t.at("gamma").get<double>() == scores[k - 1]);
        CHECK(t.at("percentile").get<double>() == doctest::Approx(1.0 - target));
        CHECK(t.at("sample_count") == scores.size());
        CHECK(t.at("calibration_split") == "test");
        const auto below = std::count_if(scores.begin(), scores.end(),
                                         [&](double s) { return s < t.at("gamma").get<double>(); });
        CHECK(t.at("realized_fnr").get<double>() == static_cast<double>(below) / n);
        CHECK(t.at("realized_fnr").get<double>() <= target);
    }

    const Run bad = run_cli(dir, "calibrate --config " + quoted(cfg_path) + " --checkpoint " +
                                     quoted(trained.checkpoint) + " --target-fnr 1.5 --out " +
                                     quoted(dir / "bad"));
    CHECK(bad.status == 1);
    CHECK(bad.err.find("(0, 1)") != std::string::npos);
    CHECK(count_files(dir / "bad") == 0);
}

TEST_CASE("inspect-filters on a hand-built checkpoint") {
    TempDir dir("cli_filters");
    const NetworkSpec backbone{{1, 2, 2}, {LayerSpec::conv2d(1, 4, 1), LayerSpec::relu(), LayerSpec::global_avg_pool()}};
    Checkpoint c;
    c.model = build_dual_model(backbone, 3, 0, 5);
    c.model.head_known.params["L0.weight"] =
        Tensor(Shape{3, 4}, std::vector<double>{1, -1, -2, 0.5, -1, 2, -0.5, -3, 0.25, -4, -1, 0});
    save_checkpoint(c, dir / "hand.nvfg");

    const Run r = run_cli(dir, "inspect-filters --checkpoint " + quoted(dir / "hand.nvfg") + " --out " +
                                   quoted(dir / "report"));
    REQUIRE(r.status == 0);
    const Json j = Json::parse(slurp(dir / "report" / "filters.json"));
    CHECK(j.at("num_classes") == 3);
    CHECK(j.at("num_filters") == 4);
    CHECK(j.at("classes").at(0).at("positive") == Json::array({0, 3}));
    CHECK(j.at("classes").at(0).at("negative") == Json::array({1, 2}));
    CHECK(j.at("classes").at(1).at("negative") == Json::array({0, 2, 3}));
    CHECK(j.at("classes").at(2).at("negative") == Json::array({1, 2}));
    CHECK(j.at("globally_negative") == Json::array({2}));

    // The global set is the intersection of the per-class negative sets.
    std::vector<int> common{0, 1, 2, 3};
    for (const Json& cls : j.at("classes")) {
        std::vector<int> next;
        for (int f : common) {
            const auto& neg = cls.at("negative");
            if (std::find(neg.begin(), neg.end(), f) != neg.end()) next.push_back(f);
        }
        common = next;
    }
    CHECK(j.at("globally_negative") == Json(common));

    // A backbone without pooled features is refused.
    Checkpoint flat;
    flat.model = build_dual_model(NetworkSpec{{4}, {LayerSpec::dense(4, 3)}}, 2, 0, 1);
    save_checkpoint(flat, dir / "flat.nvfg");
    const Run refused = run_cli(dir, "inspect-filters --checkpoint " + quoted(dir / "flat.nvfg") + " --out " +
                                         quoted(dir / "flat_report"));
    CHECK(refused.status == 1);
    CHECK(count_files(dir / "flat_report") == 0);
}

TEST_CASE("filter report of a trained toy model follows the schema") {
    TempDir dir("cli_schema");
    const TrainOutputs trained = cmd_train(options(kToyDir / "toy.json", dir / "train"));
    CommandOptions o;
    o.checkpoint = trained.checkpoint;
    o.out = dir / "report";
    const Json j = Json::parse(slurp(cmd_inspect_filters(o)));

    REQUIRE(j.is_object());
    const std::size_t classes = j.at("num_classes").get<std::size_t>();
    const std::size_t filters = j.at("num_filters").get<std::size_t>();
    CHECK(classes == 3);
    CHECK(filters == 8);
    REQUIRE(j.at("weights").size() == classes);
    REQUIRE(j.at("classes").size() == classes);
    for (std::size_t i = 0; i < classes; ++i) {
        const Json& row = j.at("weights").at(i);
        REQUIRE(row.size() == filters);
        const Json& cls = j.at("classes").at(i);
        std::vector<int> pos = cls.at("positive"), neg = cls.at("negative");
        for (int f : pos) CHECK(row.at(static_cast<std::size_t>(f)).get<double>() > 0.0);
        for (int f : neg) CHECK(row.at(static_cast<std::size_t>(f)).get<double>() < 0.0);
        CHECK(std::is_sorted(pos.begin(), pos.end()));
        CHECK(std::is_sorted(neg.begin(), neg.end()));
    }
    CHECK(j.at("globally_negative").is_array());
}

TEST_CASE("usage errors") {
    TempDir dir("cli_usage");
    CHECK(run_cli(dir, "").status == 2);
    CHECK(run_cli(dir, "bogus").status == 2);
    const Run missing = run_cli(dir, "eval --config x.json");
    CHECK(missing.status == 2);
    CHECK(missing.err.find("--checkpoint") != std::string::npos);
    CHECK(run_cli(dir, "--help").status == 0);

    const Run bad_mode = run_cli(dir, "train --config " + quoted(kToyDir / "toy.json") + " --mode sideways --out " +
                                          quoted(dir / "run"));
    CHECK(bad_mode.status == 1);
    CHECK(bad_mode.err.find("sideways") != std::string::npos);
}

TEST_CASE("bundled toy checkpoint scores the probe like a hand forward pass") {
    const Checkpoint ckpt = load_checkpoint(kToyDir / "checkpoint.nvfg");
    const Dataset probe = load_csv(kToyDir / "probe.csv");
    REQUIRE(probe.size() == 1);
    const Tensor x = probe.samples[0].reshaped(ckpt.model.backbone.spec.input_shape);

    // conv 2x2 -> relu -> conv 2x2 -> relu -> mean over space -> dense, by hand.
    const auto& p = ckpt.model.backbone.params;
    auto conv_relu = [](const Tensor& in, const Tensor& w, const Tensor& b) {
        const std::size_t cin = in.shape()[0], h = in.shape()[1], wd = in.shape()[2];
        const std::size_t cout = w.shape()[0], k = w.shape()[2];
        Tensor out(Shape{cout, h - k + 1, wd - k + 1});
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i + k <= h; ++i)
                for (std::size_t j = 0; j + k <= wd; ++j) {
                    double s = b[o];
                    for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) s += w.at({o, c, u, v}) * in.at({c, i + u, j + v});
                    out.at({o, i, j}) = std::max(0.0, s);
                }
        return out;
    };
    const Tensor h1 = conv_relu(x, p.at("L0.weight"), p.at("L0.bias"));
    const Tensor h2 = conv_relu(h1, p.at("L2.weight"), p.at("L2.bias"));
    const std::size_t width = h2.shape()[0], area = h2.shape()[1] * h2.shape()[2];
    std::vector<double> pooled(width, 0.0);
    for (std::size_t f = 0; f < width; ++f) {
        for (std::size_t a = 0; a < area; ++a) pooled[f] += h2[f * area + a];
        pooled[f] /= static_cast<double>(area);
    }
    const Tensor& w = ckpt.model.head_known.params.at("L0.weight");
    const Tensor& b = ckpt.model.head_known.params.at("L0.bias");
    double best = -INFINITY;
    for (std::size_t c = 0; c < ckpt.model.known_classes; ++c) {
        double s = b[c];
        for (std::size_t f = 0; f < width; ++f) s += w.at({c, f}) * pooled[f];
        best = std::max(best, s);
    }
    CHECK(std::abs(novelty_score(ckpt.model, x).score - best) <= 1e-12);

    // The bundled file is what training the toy config produces.
    TempDir dir("cli_bundled");
    const TrainOutputs fresh = cmd_train(options(kToyDir / "toy.json", dir.path()));
    CHECK(slurp(fresh.checkpoint) == slurp(kToyDir / "checkpoint.nvfg"));
}
