#pragma once

#include <cstddef>
#include <vector>

#include "nvfg/tensor.hpp"

namespace nvfg {

struct DualBranchModel;

using IndexSet = std::vector<std::size_t>;  // ascending

struct FilterSigns {
    IndexSet positive;  // W[i][j] > 0
    IndexSet negative;  // W[i][j] < 0
};

/// Sign split of one class row of a [c, k] head weight matrix. Exact zeros
/// belong to neither set.
FilterSigns classify_filters(const Tensor& weights, std::size_t class_index);

/// Filters whose weight is negative for every class row.
IndexSet globally_negative_filters(const Tensor& weights);

enum class FilterSign { positive, negative };

/// The k_top largest (positive) or smallest (negative) weights of one class
/// row, ties to the lower index.
IndexSet top_filters(const Tensor& weights, std::size_t class_index, std::size_t k_top, FilterSign sign);

struct FilterReport {
    std::size_t num_filters = 0;
    std::vector<FilterSigns> classes;
    IndexSet globally_negative;
    Tensor weights;  // [c, k]
};

FilterReport filter_report(const Tensor& weights);

/// Report for the known head of a model whose backbone ends in global
/// average pooling; only the first known_classes rows are analysed.
FilterReport filter_report(const DualBranchModel& model);

}  // namespace nvfg
