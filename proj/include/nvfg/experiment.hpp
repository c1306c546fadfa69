#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nvfg/data_io.hpp"
#include "nvfg/dual_trainer.hpp"
#include "nvfg/json_io.hpp"
#include "nvfg/novelty_eval.hpp"

namespace nvfg {

struct DataSource {
    std::string format;  // "csv" or "idx"
    std::filesystem::path path;    // csv
    std::filesystem::path images;  // idx
    std::filesystem::path labels;  // idx
};

struct BenchmarkSource {
    std::uint64_t seed = 0;
    BenchmarkLayout layout;
};

/// Exactly one of synthetic / benchmark / labeled / (known + novel) supplies
/// the known and novel data; reference data comes from the synthetic spec or
/// its own source.
struct DatasetSection {
    std::optional<SyntheticSpec> synthetic;
    std::optional<BenchmarkSource> benchmark;
    std::optional<DataSource> labeled;
    std::optional<DataSource> known;
    std::optional<DataSource> novel;
    std::optional<DataSource> reference;
    SplitSpec split;
};

struct EvaluationSection {
    double target_fnr = 0.05;
    std::string calibration_split = "test";  // known split used for calibration
    std::vector<TrainingMode> ablation_modes{TrainingMode::ce_only, TrainingMode::ce_membership,
                                             TrainingMode::dual_ce, TrainingMode::dual_full};
    std::size_t ablation_seeds = 1;
};

struct ExperimentConfig {
    DatasetSection dataset;
    NetworkSpec backbone;
    TrainingConfig training;
    EvaluationSection evaluation;
};

/// Parses the four-section JSON document. Relative paths resolve against
/// `base_dir`; referenced files must exist.
ExperimentConfig parse_experiment_config(const Json& doc, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ExperimentData {
    Dataset train;  // known classes, training half
    Dataset test;   // known classes, test half
    Dataset novel;
    std::optional<Dataset> reference;
};

/// Loads or generates the data and applies the known/novel and train/test splits.
ExperimentData assemble_experiment(const DatasetSection& section);

struct Evaluation {
    std::vector<ScoreRecord> records;  // known test samples first, then novel
    RocResult roc;
    double accuracy = 0.0;
};

Evaluation evaluate(const DualBranchModel& model, const Dataset& known_test, const Dataset& novel);

/// Builds the model layout for cfg.mode and trains it on the experiment data.
TrainingRun train_experiment(const ExperimentData& data, const NetworkSpec& backbone,
                             const TrainingConfig& cfg, const EpochCallback& on_epoch = {});

struct AblationRow {
    std::size_t seed_index = 0;
    std::uint64_t seed = 0;
    TrainingMode mode = TrainingMode::ce_only;
    double auc = 0.0;
    double accuracy = 0.0;
};

/// Seed of (seed_index, mode_index): base + 100 * seed_index + mode_index.
std::uint64_t ablation_seed(std::uint64_t base, std::size_t seed_index, std::size_t mode_index);

std::vector<AblationRow> run_ablation(const ExperimentData& data, const NetworkSpec& backbone,
                                      const TrainingConfig& base, std::span<const TrainingMode> modes,
                                      std::size_t seeds);

}  // namespace nvfg
