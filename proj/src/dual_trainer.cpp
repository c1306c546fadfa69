#include "nvfg/dual_trainer.hpp"

#include <cmath>

#include "nvfg/errors.hpp"
#include "nvfg/losses.hpp"

namespace nvfg {

std::string to_string(TrainingMode mode) {
    switch (mode) {
        case TrainingMode::ce_only: return "ce-only";
        case TrainingMode::ce_membership: return "ce+membership";
        case TrainingMode::dual_ce: return "dual-ce";
        case TrainingMode::dual_full: return "dual-full";
        case TrainingMode::finetune_joint: return "finetune-cC";
    }
    return "unknown";
}

TrainingMode training_mode_from_string(const std::string& name) {
    for (TrainingMode m : {TrainingMode::ce_only, TrainingMode::ce_membership, TrainingMode::dual_ce,
                           TrainingMode::dual_full, TrainingMode::finetune_joint}) {
        if (to_string(m) == name) return m;
    }
    throw ConfigError("unknown training mode '" + name + "'");
}

bool uses_reference(TrainingMode mode) {
    return mode == TrainingMode::dual_ce || mode == TrainingMode::dual_full ||
           mode == TrainingMode::finetune_joint;
}

void TrainingConfig::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
    if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0) || !std::isfinite(alpha1) || !std::isfinite(alpha2)) {
        throw ConfigError("alpha weights must be finite and non-negative");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning rate must be finite and non-negative");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size_known == 0 || batch_size_reference == 0) {
        throw ConfigError("batch sizes must be positive");
    }
}

double TrainingConfig::effective_alpha2() const {
    switch (mode) {
        case TrainingMode::ce_membership:
        case TrainingMode::dual_full: return alpha2;
        default: return 0.0;
    }
}

// ---------------------------------------------------------------------------

std::size_t DualBranchModel::feature_width() const { return backbone.spec.output_shape().at(0); }

Tensor DualBranchModel::known_branch_features(const Tensor& batch) const {
    return forward(backbone.spec, backbone.params, batch).output;
}

Tensor DualBranchModel::reference_branch_features(const Tensor& batch) const {
    if (!head_reference) throw UsageError("model has no reference branch");
    return forward(backbone.spec, backbone.params, batch).output;
}

Tensor DualBranchModel::known_logits(const Tensor& batch) const {
    return forward(head_known.spec, head_known.params, known_branch_features(batch)).output;
}

Tensor DualBranchModel::reference_logits(const Tensor& batch) const {
    if (!head_reference) throw UsageError("model has no reference branch");
    return forward(head_reference->spec, head_reference->params, reference_branch_features(batch))
        .output;
}

namespace {

constexpr std::uint64_t kBackboneInitStream = 1;
constexpr std::uint64_t kKnownHeadInitStream = 2;
constexpr std::uint64_t kReferenceHeadInitStream = 3;

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream) {
    return Rng::stream(seed, stream).next();
}

Branch make_head(std::size_t width, std::size_t outputs, std::uint64_t seed) {
    Branch head;
    head.spec.input_shape = {width};
    head.spec.layers = {LayerSpec::dense(width, outputs)};
    head.params = init_params(head.spec, seed);
    return head;
}

std::size_t backbone_width(const NetworkSpec& backbone) {
    const Shape out = backbone.output_shape();
    if (out.size() != 1) {
        throw ConfigError("backbone must end in a flat feature vector, got " + shape_to_string(out));
    }
    return out[0];
}

DualBranchModel build_model(const NetworkSpec& backbone, std::size_t known_classes,
                            std::size_t reference_classes, std::uint64_t seed, bool joint_head) {
    if (known_classes < 2) throw ConfigError("at least 2 known classes are required");
    const std::size_t width = backbone_width(backbone);
    DualBranchModel model;
    model.known_classes = known_classes;
    model.reference_classes = reference_classes;
    model.backbone = {backbone, init_params(backbone, derived_seed(seed, kBackboneInitStream))};
    const std::size_t known_outputs = joint_head ? known_classes + reference_classes : known_classes;
    model.head_known = make_head(width, known_outputs, derived_seed(seed, kKnownHeadInitStream));
    if (!joint_head && reference_classes >= 1) {
        model.head_reference =
            make_head(width, reference_classes, derived_seed(seed, kReferenceHeadInitStream));
    }
    return model;
}

}  // namespace

DualBranchModel build_dual_model(const NetworkSpec& backbone, std::size_t known_classes,
                                 std::size_t reference_classes, std::uint64_t seed) {
    return build_model(backbone, known_classes, reference_classes, seed, false);
}

DualBranchModel build_joint_model(const NetworkSpec& backbone, std::size_t known_classes,
                                  std::size_t reference_classes, std::uint64_t seed) {
    return build_model(backbone, known_classes, reference_classes, seed, true);
}

DualBranchModel build_model_for_mode(TrainingMode mode, const NetworkSpec& backbone,
                                     std::size_t known_classes, std::size_t reference_classes,
                                     std::uint64_t seed) {
    switch (mode) {
        case TrainingMode::ce_only:
        case TrainingMode::ce_membership:
            return build_dual_model(backbone, known_classes, 0, seed);
        case TrainingMode::dual_ce:
        case TrainingMode::dual_full:
            if (reference_classes == 0) {
                throw ConfigError(to_string(mode) + " needs at least one reference class");
            }
            return build_dual_model(backbone, known_classes, reference_classes, seed);
        case TrainingMode::finetune_joint:
            return build_joint_model(backbone, known_classes, reference_classes, seed);
    }
    throw ConfigError("unknown training mode");
}

// ---------------------------------------------------------------------------

StepGradients compute_step_gradients(const DualBranchModel& model, const LabeledBatch& known,
                                     const LabeledBatch* reference, const TrainingConfig& cfg) {
    const double alpha2 = cfg.effective_alpha2();
    StepGradients out;

    const ForwardResult features = forward(model.backbone.spec, model.backbone.params, known.inputs);
    const ForwardResult logits =
        forward(model.head_known.spec, model.head_known.params, features.output);

    const LossResult ce = cross_entropy(logits.output, known.labels);
    out.metrics.ce_known = ce.value;
    Tensor grad_f = ce.grad;
    if (cfg.alpha1 != 1.0) {
        for (double& g : grad_f.data()) g *= cfg.alpha1;
    }
    if (cfg.mode != TrainingMode::finetune_joint) {
        const LossResult member = membership_loss(logits.output, known.labels, {cfg.lambda});
        out.metrics.membership_known = member.value;
        if (alpha2 != 0.0) {
            for (std::size_t i = 0; i < grad_f.numel(); ++i) grad_f[i] += alpha2 * member.grad[i];
        }
    }
    Gradients head_grads = backward(model.head_known.spec, model.head_known.params, logits.cache, grad_f);
    Gradients backbone_grads =
        backward(model.backbone.spec, model.backbone.params, features.cache, head_grads.input);
    out.head_known = std::move(head_grads.params);
    out.backbone = std::move(backbone_grads.params);

    if (reference != nullptr) {
        if (!model.head_reference) throw UsageError("reference batch given to a model without a reference head");
        const Branch& head_r = *model.head_reference;
        const ForwardResult ref_features =
            forward(model.backbone.spec, model.backbone.params, reference->inputs);
        const ForwardResult ref_logits = forward(head_r.spec, head_r.params, ref_features.output);
        const LossResult ref_ce = cross_entropy(ref_logits.output, reference->labels);
        out.metrics.ce_reference = ref_ce.value;
        Gradients ref_head = backward(head_r.spec, head_r.params, ref_logits.cache, ref_ce.grad);
        Gradients ref_backbone =
            backward(model.backbone.spec, model.backbone.params, ref_features.cache, ref_head.input);
        out.head_reference = std::move(ref_head.params);
        out.backbone = out.backbone.plus(ref_backbone.params);
    }

    out.metrics.total = cumulative_loss(out.metrics.ce_reference, out.metrics.ce_known,
                                        out.metrics.membership_known, cfg.alpha1, alpha2);
    if (!std::isfinite(out.metrics.total)) {
        throw DivergenceError("non-finite cumulative loss");
    }
    return out;
}

OptimizerSet make_optimizers(const DualBranchModel& model, const TrainingConfig& cfg) {
    OptimizerSet set{make_optimizer(model.backbone.params, cfg.learning_rate, cfg.momentum),
                     make_optimizer(model.head_known.params, cfg.learning_rate, cfg.momentum),
                     std::nullopt};
    if (model.head_reference) {
        set.head_reference =
            make_optimizer(model.head_reference->params, cfg.learning_rate, cfg.momentum);
    }
    return set;
}

namespace {

void apply(const char* part, ParamSet& params, const ParamSet& grads, OptimizerState& state) {
    try {
        sgd_step(params, grads, state);
    } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(part) + ": " + e.what());
    }
}

}  // namespace

StepMetrics train_step(DualBranchModel& model, OptimizerSet& optimizers, const LabeledBatch& known,
                       const LabeledBatch* reference, const TrainingConfig& cfg) {
    StepGradients grads = compute_step_gradients(model, known, reference, cfg);
    apply("backbone", model.backbone.params, grads.backbone, optimizers.backbone);
    apply("head_known", model.head_known.params, grads.head_known, optimizers.head_known);
    if (reference != nullptr) {
        apply("head_reference", model.head_reference->params, grads.head_reference,
              *optimizers.head_reference);
    }
    return grads.metrics;
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t stream)
    : batch_size_(batch_size), rng_(Rng::stream(seed, stream)), order_(dataset_size), cursor_(0) {
    if (dataset_size == 0) throw DatasetError("cannot sample from an empty dataset");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    for (std::size_t i = 0; i < dataset_size; ++i) order_[i] = i;
    reshuffle();
}

void BatchSampler::reshuffle() {
    rng_.shuffle(order_);
    cursor_ = 0;
}

std::vector<std::vector<std::size_t>> BatchSampler::next_epoch() {
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < order_.size(); start += batch_size_) {
        const std::size_t stop = std::min(order_.size(), start + batch_size_);
        batches.emplace_back(order_.begin() + static_cast<std::ptrdiff_t>(start),
                             order_.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    reshuffle();
    return batches;
}

std::vector<std::size_t> BatchSampler::next_cycled() {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size_);
    while (batch.size() < batch_size_) {
        if (cursor_ == order_.size()) reshuffle();
        batch.push_back(order_[cursor_++]);
    }
    return batch;
}

Dataset joint_label_space(const Dataset& known, const Dataset& reference) {
    require_disjoint_classes(known, reference);
    Dataset out = known;
    const int offset = static_cast<int>(known.num_classes());
    out.class_names.insert(out.class_names.end(), reference.class_names.begin(),
                           reference.class_names.end());
    for (std::size_t i = 0; i < reference.size(); ++i) {
        out.samples.push_back(reference.samples[i]);
        out.labels.push_back(reference.labels[i] + offset);
    }
    if (!reference.empty()) out.provenance = known.provenance + "+" + reference.provenance;
    return out;
}

TrainingRun train(DualBranchModel model, const Dataset& known, const Dataset* reference,
                  const TrainingConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    known.validate();
    if (known.empty()) throw DatasetError("known training set is empty");
    const bool wants_reference = uses_reference(cfg.mode);
    if (!wants_reference && reference != nullptr) {
        throw ConfigError(to_string(cfg.mode) + " does not accept a reference dataset");
    }
    if (wants_reference && reference == nullptr) {
        throw ConfigError(to_string(cfg.mode) + " requires a reference dataset");
    }
    if (known.num_classes() != model.known_classes) {
        throw ConfigError("model expects " + std::to_string(model.known_classes) +
                          " known classes, dataset has " + std::to_string(known.num_classes()));
    }
    if (reference != nullptr) {
        reference->validate();
        require_disjoint_classes(known, *reference);
        if (reference->num_classes() != model.reference_classes) {
            throw ConfigError("model expects " + std::to_string(model.reference_classes) +
                              " reference classes, dataset has " +
                              std::to_string(reference->num_classes()));
        }
    }

    TrainingRun run{std::move(model), {}};
    if (cfg.epochs == 0) return run;

    const bool joint = cfg.mode == TrainingMode::finetune_joint;
    if (joint && run.model.head_reference) {
        throw ConfigError("finetune-cC trains a single joint head");
    }
    if (!joint && wants_reference && !run.model.head_reference) {
        throw ConfigError(to_string(cfg.mode) + " needs a model with a reference head");
    }
    const Dataset joint_data = joint ? joint_label_space(known, *reference) : Dataset{};
    const Dataset& primary = joint ? joint_data : known;
    const bool paired = wants_reference && !joint;

    const Shape& input_shape = run.model.backbone.spec.input_shape;
    OptimizerSet optimizers = make_optimizers(run.model, cfg);
    BatchSampler known_sampler(primary.size(), cfg.batch_size_known, cfg.seed, kKnownSamplerStream);
    std::optional<BatchSampler> reference_sampler;
    if (paired) {
        reference_sampler.emplace(reference->size(), cfg.batch_size_reference, cfg.seed,
                                  kReferenceSamplerStream);
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord record{epoch};
        const auto batches = known_sampler.next_epoch();
        for (const auto& idx : batches) {
            const LabeledBatch known_batch{primary.batch(idx, input_shape), primary.batch_labels(idx)};
            StepMetrics m;
            if (paired) {
                const auto ridx = reference_sampler->next_cycled();
                const LabeledBatch ref_batch{reference->batch(ridx, input_shape),
                                             reference->batch_labels(ridx)};
                m = train_step(run.model, optimizers, known_batch, &ref_batch, cfg);
            } else {
                m = train_step(run.model, optimizers, known_batch, nullptr, cfg);
            }
            record.ce_reference += m.ce_reference;
            record.ce_known += m.ce_known;
            record.membership_known += m.membership_known;
            record.total += m.total;
        }
        const double steps = static_cast<double>(batches.size());
        record.ce_reference /= steps;
        record.ce_known /= steps;
        record.membership_known /= steps;
        record.total /= steps;
        run.history.push_back(record);
        if (on_epoch) on_epoch(run.model, record);
    }
    return run;
}

}  // namespace nvfg
