#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nvfg/data_io.hpp"
#include "nvfg/nn.hpp"
#include "nvfg/rng.hpp"

namespace nvfg {

enum class TrainingMode {
    ce_only,          // single branch, cross-entropy
    ce_membership,    // single branch, cross-entropy + membership loss
    dual_ce,          // reference branch added, cross-entropy only on T
    dual_full,        // reference branch, cross-entropy + membership on T
    finetune_joint,   // one head over c + C classes trained on T and R together
};

std::string to_string(TrainingMode mode);
TrainingMode training_mode_from_string(const std::string& name);
bool uses_reference(TrainingMode mode);

struct TrainingConfig {
    double lambda = 5.0;
    double alpha1 = 1.0;
    double alpha2 = 1.0;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t epochs = 10;
    std::size_t batch_size_known = 32;
    std::size_t batch_size_reference = 32;
    std::uint64_t seed = 0;
    TrainingMode mode = TrainingMode::dual_full;

    void validate() const;
    /// Weight actually applied to the membership term in this mode.
    double effective_alpha2() const;
};

struct Branch {
    NetworkSpec spec;
    ParamSet params;
};

/// One shared backbone feeding a known-class head and, optionally, a
/// reference head. Both branches read the single stored backbone.
struct DualBranchModel {
    Branch backbone;
    Branch head_known;
    std::optional<Branch> head_reference;
    std::size_t known_classes = 0;
    std::size_t reference_classes = 0;

    std::size_t feature_width() const;
    /// Backbone output as the known branch sees it.
    Tensor known_branch_features(const Tensor& batch) const;
    /// Backbone output as the reference branch sees it.
    Tensor reference_branch_features(const Tensor& batch) const;
    /// Raw known-head activations f(x).
    Tensor known_logits(const Tensor& batch) const;
    Tensor reference_logits(const Tensor& batch) const;
};

/// Heads are dense layers over the backbone output; head_reference exists iff
/// reference_classes >= 1. The three parts draw from independent seed streams.
DualBranchModel build_dual_model(const NetworkSpec& backbone, std::size_t known_classes,
                                 std::size_t reference_classes, std::uint64_t seed);

/// Single head with known_classes + reference_classes outputs, no reference
/// head. Uses the same seed streams as build_dual_model.
DualBranchModel build_joint_model(const NetworkSpec& backbone, std::size_t known_classes,
                                  std::size_t reference_classes, std::uint64_t seed);

/// Model layout appropriate for `mode`.
DualBranchModel build_model_for_mode(TrainingMode mode, const NetworkSpec& backbone,
                                     std::size_t known_classes, std::size_t reference_classes,
                                     std::uint64_t seed);

struct LabeledBatch {
    Tensor inputs;
    std::vector<int> labels;
};

struct StepMetrics {
    double ce_reference = 0.0;
    double ce_known = 0.0;
    double membership_known = 0.0;
    double total = 0.0;
};

struct StepGradients {
    ParamSet backbone;
    ParamSet head_known;
    ParamSet head_reference;  // empty when there is no reference batch
    StepMetrics metrics;
};

/// Loss components and gradients for one paired step. The backbone gradient
/// is the sum of the known-branch and reference-branch contributions.
StepGradients compute_step_gradients(const DualBranchModel& model, const LabeledBatch& known,
                                     const LabeledBatch* reference, const TrainingConfig& cfg);

struct OptimizerSet {
    OptimizerState backbone;
    OptimizerState head_known;
    std::optional<OptimizerState> head_reference;
};

OptimizerSet make_optimizers(const DualBranchModel& model, const TrainingConfig& cfg);

/// One SGD step on backbone and both heads.
StepMetrics train_step(DualBranchModel& model, OptimizerSet& optimizers, const LabeledBatch& known,
                       const LabeledBatch* reference, const TrainingConfig& cfg);

/// Shuffled mini-batch indices. `next_epoch` yields one full pass;
/// `next_cycled` draws a batch from an endless stream reshuffled on exhaustion.
class BatchSampler {
public:
    BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                 std::uint64_t stream);

    std::vector<std::vector<std::size_t>> next_epoch();
    std::vector<std::size_t> next_cycled();

private:
    void reshuffle();

    std::size_t batch_size_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_;
};

// Sampler stream ids, exposed so external loops can reproduce the batching.
inline constexpr std::uint64_t kKnownSamplerStream = 11;
inline constexpr std::uint64_t kReferenceSamplerStream = 12;

struct EpochRecord {
    std::size_t epoch = 0;
    double ce_reference = 0.0;
    double ce_known = 0.0;
    double membership_known = 0.0;
    double total = 0.0;
};

struct TrainingRun {
    DualBranchModel model;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const DualBranchModel&, const EpochRecord&)>;

/// Epochs run over the known set; the reference set is cycled alongside.
/// `reference` must be null for single-branch modes and present otherwise.
TrainingRun train(DualBranchModel model, const Dataset& known, const Dataset* reference,
                  const TrainingConfig& cfg, const EpochCallback& on_epoch = {});

/// Concatenates known and reference samples with reference labels offset by
/// the known class count.
Dataset joint_label_space(const Dataset& known, const Dataset& reference);

}  // namespace nvfg
