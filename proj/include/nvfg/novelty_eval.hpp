#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "nvfg/data_io.hpp"
#include "nvfg/dual_trainer.hpp"

namespace nvfg {

struct ScoreRecord {
    std::size_t sample_id = 0;
    double score = 0.0;       // max over the first c known-head activations
    int predicted_class = 0;  // argmax over the same activations
    int true_class = -1;      // known-class index, or -1 for novel samples
    bool is_novel = false;
};

/// Score and argmax of the first `known_classes` entries of one logit row.
/// Ties resolve to the lower index.
ScoreRecord score_logits(std::span<const double> logits, std::size_t known_classes);

/// Known-branch forward pass on a single sample (any shape with the backbone's
/// element count).
ScoreRecord novelty_score(const DualBranchModel& model, const Tensor& sample);

/// Scores every sample of a dataset; known datasets carry their labels,
/// novel datasets are marked novel.
std::vector<ScoreRecord> score_dataset(const DualBranchModel& model, const Dataset& data,
                                       bool novel, std::size_t first_id = 0);

enum class Decision { known, novel };

struct NoveltyThreshold {
    double gamma = 0.0;
    double percentile = 0.0;  // share of matched scores accepted, 1 - target FNR
    double target_fnr = 0.0;
    double realized_fnr = 0.0;
    std::size_t sample_count = 0;
};

/// Novel iff score < gamma.
Decision decide(double score, double gamma);
inline Decision decide(const ScoreRecord& record, const NoveltyThreshold& t) {
    return decide(record.score, t.gamma);
}

/// gamma = the ceil(target_fnr * n)-th smallest matched score.
NoveltyThreshold calibrate_threshold(std::span<const double> matched_scores, double target_fnr);

struct RocPoint {
    double threshold = 0.0;  // +inf for the (0, 0) anchor
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

/// Sweeps every distinct score as a threshold (score >= t accepted as known),
/// AUC by the trapezoid rule.
RocResult roc_auc(std::span<const double> known_scores, std::span<const double> novel_scores);

/// Mann-Whitney estimate: (#known > novel + 0.5 #ties) / (n_known n_novel).
double auc_pairwise_oracle(std::span<const double> known_scores, std::span<const double> novel_scores);

/// Fraction of samples whose known-head argmax equals the label.
double closed_set_accuracy(const DualBranchModel& model, const Dataset& known_test);
double closed_set_accuracy(std::span<const ScoreRecord> records);

void write_score_report(std::span<const ScoreRecord> records, const std::filesystem::path& path);
std::vector<ScoreRecord> read_score_report(const std::filesystem::path& path);
void write_roc(const RocResult& roc, const std::filesystem::path& path);

}  // namespace nvfg
