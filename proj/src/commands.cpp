#include "nvfg/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <map>
#include <sstream>

#include "nvfg/checkpoint.hpp"
#include "nvfg/errors.hpp"
#include "nvfg/file_util.hpp"
#include "nvfg/filter_analysis.hpp"

namespace nvfg {

namespace {

ExperimentConfig config_with_overrides(const CommandOptions& opts) {
    if (opts.config.empty()) throw ConfigError("--config is required");
    ExperimentConfig cfg = load_experiment_config(opts.config);
    if (opts.seed) cfg.training.seed = *opts.seed;
    if (opts.mode) cfg.training.mode = training_mode_from_string(*opts.mode);
    return cfg;
}

void ensure_out_dir(const std::filesystem::path& out) {
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec || !std::filesystem::is_directory(out)) {
        throw IoError("cannot create output directory '" + out.string() + "'");
    }
}

Checkpoint require_checkpoint(const CommandOptions& opts) {
    if (opts.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    return load_checkpoint(opts.checkpoint);
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    out << "epoch,ce_reference,ce_known,membership_known,total\n";
    for (const EpochRecord& r : history) {
        out << r.epoch << ',' << format_double(r.ce_reference) << ',' << format_double(r.ce_known) << ','
            << format_double(r.membership_known) << ',' << format_double(r.total) << '\n';
    }
    return out.str();
}

}  // namespace

TrainOutputs cmd_train(const CommandOptions& opts) {
    const ExperimentConfig cfg = config_with_overrides(opts);
    const ExperimentData data = assemble_experiment(cfg.dataset);
    const TrainingRun run = train_experiment(data, cfg.backbone, cfg.training);

    Checkpoint ckpt{run.model, cfg.training, run.history.size(), Json::object()};
    if (!run.history.empty()) {
        const EpochRecord& last = run.history.back();
        ckpt.metrics = {{"ce_reference", last.ce_reference},
                        {"ce_known", last.ce_known},
                        {"membership_known", last.membership_known},
                        {"total", last.total}};
    }
    ensure_out_dir(opts.out);
    TrainOutputs outputs{opts.out / "checkpoint.nvfg", opts.out / "history.csv"};
    save_checkpoint(ckpt, outputs.checkpoint);
    write_file_atomic(outputs.history, history_csv(run.history));
    return outputs;
}

EvalOutputs cmd_eval(const CommandOptions& opts) {
    const Checkpoint ckpt = require_checkpoint(opts);
    const ExperimentConfig cfg = config_with_overrides(opts);
    const ExperimentData data = assemble_experiment(cfg.dataset);
    const Evaluation ev = evaluate(ckpt.model, data.test, data.novel);

    ensure_out_dir(opts.out);
    EvalOutputs outputs{opts.out / "scores.csv", opts.out / "roc.csv", opts.out / "summary.json",
                        round4(ev.roc.auc), ev.accuracy};
    const Json summary{{"auc", outputs.auc},
                       {"accuracy", ev.accuracy},
                       {"known_test_samples", data.test.size()},
                       {"novel_samples", data.novel.size()},
                       {"mode", to_string(ckpt.config.mode)}};
    write_score_report(ev.records, outputs.scores);
    write_roc(ev.roc, outputs.roc);
    write_file_atomic(outputs.summary, summary.dump(2) + "\n");
    return outputs;
}

std::filesystem::path cmd_calibrate(const CommandOptions& opts) {
    const Checkpoint ckpt = require_checkpoint(opts);
    const ExperimentConfig cfg = config_with_overrides(opts);
    const double target = opts.target_fnr.value_or(cfg.evaluation.target_fnr);
    if (!(target > 0.0 && target < 1.0)) {
        throw ConfigError("target false negative rate must lie in (0, 1), got " + std::to_string(target));
    }
    const ExperimentData data = assemble_experiment(cfg.dataset);
    const Dataset& matched = cfg.evaluation.calibration_split == "train" ? data.train : data.test;
    if (matched.empty()) throw CalibrationError("validation set is empty");

    std::vector<double> scores;
    for (const ScoreRecord& r : score_dataset(ckpt.model, matched, false)) scores.push_back(r.score);
    const NoveltyThreshold threshold = calibrate_threshold(scores, target);

    ensure_out_dir(opts.out);
    const auto path = opts.out / "threshold.json";
    Json doc = to_json(threshold);
    doc["calibration_split"] = cfg.evaluation.calibration_split;
    write_file_atomic(path, doc.dump(2) + "\n");
    return path;
}

AblateOutputs cmd_ablate(const CommandOptions& opts) {
    const ExperimentConfig cfg = config_with_overrides(opts);
    std::vector<TrainingMode> modes = cfg.evaluation.ablation_modes;
    if (opts.mode) modes = {training_mode_from_string(*opts.mode)};
    const std::size_t seeds = opts.seeds.value_or(cfg.evaluation.ablation_seeds);
    const ExperimentData data = assemble_experiment(cfg.dataset);

    AblateOutputs outputs;
    outputs.results = run_ablation(data, cfg.backbone, cfg.training, modes, seeds);

    std::ostringstream rows;
    rows << "seed_index,seed,mode,auc,accuracy\n";
    std::map<TrainingMode, std::pair<double, double>> sums;
    for (const AblationRow& r : outputs.results) {
        rows << r.seed_index << ',' << r.seed << ',' << to_string(r.mode) << ',' << format_double(r.auc)
             << ',' << format_double(r.accuracy) << '\n';
        sums[r.mode].first += r.auc;
        sums[r.mode].second += r.accuracy;
    }
    std::ostringstream summary;
    summary << "mode,seeds,mean_auc,mean_accuracy\n";
    char buf[64];
    for (TrainingMode m : modes) {
        std::snprintf(buf, sizeof buf, "%.4f,%.4f", sums[m].first / static_cast<double>(seeds),
                      sums[m].second / static_cast<double>(seeds));
        summary << to_string(m) << ',' << seeds << ',' << buf << '\n';
    }
    ensure_out_dir(opts.out);
    outputs.rows = opts.out / "ablation.csv";
    outputs.summary = opts.out / "ablation_summary.csv";
    write_file_atomic(outputs.rows, rows.str());
    write_file_atomic(outputs.summary, summary.str());
    return outputs;
}

std::filesystem::path cmd_inspect_filters(const CommandOptions& opts) {
    const Checkpoint ckpt = require_checkpoint(opts);
    const FilterReport report = filter_report(ckpt.model);
    ensure_out_dir(opts.out);
    const auto path = opts.out / "filters.json";
    write_file_atomic(path, to_json(report).dump(2) + "\n");
    return path;
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Novelty detection with membership loss and reference-set training", "nvfg"};
    app.require_subcommand(1);

    CommandOptions opts;
    std::string config, checkpoint, out_dir = ".";
    std::uint64_t seed = 0;
    std::string mode;
    double target_fnr = 0.0;
    std::size_t seeds = 0;

    auto add_common = [&](CLI::App* cmd, bool needs_config, bool needs_checkpoint) {
        auto* c = cmd->add_option("--config", config, "Experiment config (JSON)");
        if (needs_config) c->required();
        auto* k = cmd->add_option("--checkpoint", checkpoint, "Checkpoint file");
        if (needs_checkpoint) k->required();
        cmd->add_option("--out", out_dir, "Output directory");
        cmd->add_option("--seed", seed, "Override the training seed");
        cmd->add_option("--mode", mode, "Training mode: ce-only, ce+membership, dual-ce, dual-full, finetune-cC");
    };

    auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
    add_common(train_cmd, true, false);
    auto* eval_cmd = app.add_subcommand("eval", "Score test data, emit ROC/AUC and accuracy");
    add_common(eval_cmd, true, true);
    auto* calibrate_cmd = app.add_subcommand("calibrate", "Calibrate the novelty threshold");
    add_common(calibrate_cmd, true, true);
    calibrate_cmd->add_option("--target-fnr", target_fnr, "Accepted false negative rate");
    auto* ablate_cmd = app.add_subcommand("ablate", "Run the training-mode ablation matrix");
    add_common(ablate_cmd, true, false);
    ablate_cmd->add_option("--seeds", seeds, "Number of seeds");
    auto* inspect_cmd = app.add_subcommand("inspect-filters", "Report positive/negative filters");
    add_common(inspect_cmd, false, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "nvfg: " << e.what() << '\n';
        return 2;
    }

    auto given = [](CLI::App* cmd, const char* flag) { return cmd->count(flag) > 0; };
    CLI::App* active = app.get_subcommands().front();
    opts.config = config;
    opts.checkpoint = checkpoint;
    opts.out = out_dir;
    if (given(active, "--seed")) opts.seed = seed;
    if (given(active, "--mode")) opts.mode = mode;
    if (active == calibrate_cmd && given(active, "--target-fnr")) opts.target_fnr = target_fnr;
    if (active == ablate_cmd && given(active, "--seeds")) opts.seeds = seeds;

    try {
        if (active == train_cmd) {
            const auto o = cmd_train(opts);
            out << o.checkpoint.string() << '\n' << o.history.string() << '\n';
        } else if (active == eval_cmd) {
            const auto o = cmd_eval(opts);
            char buf[64];
            std::snprintf(buf, sizeof buf, "auc %.4f accuracy %.4f", o.auc, o.accuracy);
            out << buf << '\n';
        } else if (active == calibrate_cmd) {
            out << cmd_calibrate(opts).string() << '\n';
        } else if (active == ablate_cmd) {
            const auto o = cmd_ablate(opts);
            out << o.rows.string() << '\n' << o.summary.string() << '\n';
        } else if (active == inspect_cmd) {
            out << cmd_inspect_filters(opts).string() << '\n';
        }
    } catch (const std::exception& e) {
        std::string line = e.what();
        for (char& ch : line) {
            if (ch == '\n') ch = ' ';
        }
        err << "nvfg: " << line << '\n';
        return 1;
    }
    return 0;
}

}  // namespace nvfg
