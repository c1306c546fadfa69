#include "nvfg/filter_analysis.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "nvfg/dual_trainer.hpp"
#include "nvfg/errors.hpp"

namespace nvfg {

namespace {

void require_matrix(const Tensor& w) {
    if (w.rank() != 2) {
        throw DimensionError("head weights must be [c,k], got " + shape_to_string(w.shape()));
    }
}

void require_class(const Tensor& w, std::size_t i) {
    require_matrix(w);
    if (i >= w.dim(0)) {
        throw IndexError("class " + std::to_string(i) + " outside [0, " + std::to_string(w.dim(0)) + ")");
    }
}

}  // namespace

FilterSigns classify_filters(const Tensor& weights, std::size_t class_index) {
    require_class(weights, class_index);
    const std::size_t k = weights.dim(1);
    FilterSigns signs;
    for (std::size_t j = 0; j < k; ++j) {
        const double w = weights[class_index * k + j];
        if (w > 0.0) signs.positive.push_back(j);
        else if (w < 0.0) signs.negative.push_back(j);
    }
    return signs;
}

IndexSet globally_negative_filters(const Tensor& weights) {
    require_matrix(weights);
    const std::size_t c = weights.dim(0), k = weights.dim(1);
    IndexSet out;
    if (c == 0) return out;
    for (std::size_t j = 0; j < k; ++j) {
        bool negative = true;
        for (std::size_t i = 0; i < c && negative; ++i) negative = weights[i * k + j] < 0.0;
        if (negative) out.push_back(j);
    }
    return out;
}

IndexSet top_filters(const Tensor& weights, std::size_t class_index, std::size_t k_top, FilterSign sign) {
    require_class(weights, class_index);
    const std::size_t k = weights.dim(1);
    if (k_top < 1 || k_top > k) {
        throw ConfigError("top-k of " + std::to_string(k_top) + " outside [1, " + std::to_string(k) + "]");
    }
    IndexSet order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* row = weights.data().data() + class_index * k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return sign == FilterSign::positive ? row[a] > row[b] : row[a] < row[b];
    });
    order.resize(k_top);
    return order;
}

FilterReport filter_report(const Tensor& weights) {
    require_matrix(weights);
    FilterReport report;
    report.num_filters = weights.dim(1);
    for (std::size_t i = 0; i < weights.dim(0); ++i) report.classes.push_back(classify_filters(weights, i));
    report.globally_negative = globally_negative_filters(weights);
    report.weights = weights;
    return report;
}

FilterReport filter_report(const DualBranchModel& model) {
    const auto& layers = model.backbone.spec.layers;
    // GAP may be followed by element-wise layers only.
    auto pool = std::find_if(layers.begin(), layers.end(),
                             [](const LayerSpec& l) { return l.kind == LayerKind::global_avg_pool; });
    const bool pooled_head =
        pool != layers.end() &&
        std::all_of(pool + 1, layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::relu; });
    if (!pooled_head) {
        throw UnsupportedArchitectureError(
            "filter analysis needs a backbone ending in global-average-pool feeding the dense head");
    }
    const Tensor& w = model.head_known.params.at(param_name(0, "weight"));
    return filter_report(w.slice_rows(0, model.known_classes));
}

}  // namespace nvfg
