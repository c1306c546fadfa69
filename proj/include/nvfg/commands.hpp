#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nvfg/experiment.hpp"

namespace nvfg {

struct CommandOptions {
    std::filesystem::path config;
    std::filesystem::path checkpoint;
    std::filesystem::path out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<double> target_fnr;
    std::optional<std::size_t> seeds;
};

struct TrainOutputs {
    std::filesystem::path checkpoint;
    std::filesystem::path history;
};

struct EvalOutputs {
    std::filesystem::path scores;
    std::filesystem::path roc;
    std::filesystem::path summary;
    double auc = 0.0;
    double accuracy = 0.0;
};

struct AblateOutputs {
    std::filesystem::path rows;
    std::filesystem::path summary;
    std::vector<AblationRow> results;
};

/// Trains per the config; writes checkpoint.nvfg and history.csv into out.
TrainOutputs cmd_train(const CommandOptions& opts);

/// Scores known-test and novel samples; writes scores.csv, roc.csv, summary.json.
EvalOutputs cmd_eval(const CommandOptions& opts);

/// Calibrates gamma on known-class samples; writes threshold.json.
std::filesystem::path cmd_calibrate(const CommandOptions& opts);

/// Runs the mode x seed matrix; writes ablation.csv and ablation_summary.csv.
AblateOutputs cmd_ablate(const CommandOptions& opts);

/// Writes filters.json for the checkpoint's known head.
std::filesystem::path cmd_inspect_filters(const CommandOptions& opts);

/// Command-line entry point. Errors become a single line on `err` and a
/// nonzero return.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace nvfg
