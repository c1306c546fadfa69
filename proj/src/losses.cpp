#include "nvfg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nvfg/errors.hpp"

namespace nvfg {

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double sigmoid_derivative(double t) {
    const double s = sigmoid(t);
    return s * (1.0 - s);
}

namespace {

struct Rows {
    std::size_t batch;
    std::size_t classes;
};

Rows as_rows(const Tensor& logits) {
    if (logits.rank() == 1) return {1, logits.dim(0)};
    if (logits.rank() == 2) return {logits.dim(0), logits.dim(1)};
    throw DimensionError("logits must be [c] or [batch,c], got " + shape_to_string(logits.shape()));
}

void check_labels(std::span<const int> labels, Rows rows) {
    if (labels.size() != rows.batch) {
        throw DimensionError(std::to_string(labels.size()) + " labels for a batch of " +
                             std::to_string(rows.batch));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= rows.classes) {
            throw LabelError("label " + std::to_string(y) + " outside [0, " +
                             std::to_string(rows.classes) + ")");
        }
    }
}

void softmax_row(std::span<const double> in, std::span<double> out) {
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = std::exp(in[i] - peak);
        total += out[i];
    }
    for (double& v : out) v /= total;
}

}  // namespace

Tensor softmax(const Tensor& logits) {
    const Rows rows = as_rows(logits);
    if (rows.classes == 0) throw DimensionError("softmax over zero classes");
    Tensor out(logits.shape());
    for (std::size_t n = 0; n < rows.batch; ++n) {
        softmax_row(logits.data().subspan(n * rows.classes, rows.classes),
                    out.data().subspan(n * rows.classes, rows.classes));
    }
    return out;
}

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
    const Rows rows = as_rows(logits);
    check_labels(labels, rows);
    if (rows.batch == 0) throw DimensionError("cross_entropy on an empty batch");

    LossResult result{0.0, softmax(logits)};
    const double inv_batch = 1.0 / static_cast<double>(rows.batch);
    for (std::size_t n = 0; n < rows.batch; ++n) {
        auto row = logits.data().subspan(n * rows.classes, rows.classes);
        const double peak = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) total += std::exp(v - peak);
        const auto y = static_cast<std::size_t>(labels[n]);
        // log-sum-exp form stays accurate when the true-class probability underflows.
        result.value += (std::log(total) + peak - row[y]) * inv_batch;
        result.grad[n * rows.classes + y] -= 1.0;
    }
    for (double& g : result.grad.data()) g *= inv_batch;
    return result;
}

LossResult cross_entropy(const Tensor& logits, int label) {
    const int labels[] = {label};
    return cross_entropy(logits, labels);
}

MembershipRisks membership_risks(std::span<const double> logits, int label) {
    const std::size_t c = logits.size();
    if (c < 2) throw ConfigError("membership loss needs at least 2 classes");
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
        throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    }
    MembershipRisks risks;
    const double miss = 1.0 - sigmoid(logits[static_cast<std::size_t>(label)]);
    risks.correct = miss * miss;
    double sum = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        if (i == static_cast<std::size_t>(label)) continue;
        const double s = sigmoid(logits[i]);
        sum += s * s;
    }
    risks.wrong = sum / static_cast<double>(c - 1);
    return risks;
}

LossResult membership_loss(const Tensor& logits, std::span<const int> labels,
                           const MembershipParams& params) {
    if (!(params.lambda > 0.0)) throw ConfigError("membership lambda must be positive");
    const Rows rows = as_rows(logits);
    if (rows.classes < 2) throw ConfigError("membership loss needs at least 2 classes");
    check_labels(labels, rows);
    if (rows.batch == 0) throw DimensionError("membership_loss on an empty batch");

    LossResult result{0.0, Tensor(logits.shape())};
    const double inv_batch = 1.0 / static_cast<double>(rows.batch);
    const double wrong_scale = 2.0 * params.lambda / static_cast<double>(rows.classes - 1);
    for (std::size_t n = 0; n < rows.batch; ++n) {
        auto row = logits.data().subspan(n * rows.classes, rows.classes);
        const auto y = static_cast<std::size_t>(labels[n]);
        const MembershipRisks risks = membership_risks(row, labels[n]);
        result.value += (risks.correct + params.lambda * risks.wrong) * inv_batch;
        for (std::size_t i = 0; i < rows.classes; ++i) {
            const double s = sigmoid(row[i]);
            const double ds = s * (1.0 - s);
            const double g = i == y ? -2.0 * (1.0 - s) * ds : wrong_scale * s * ds;
            result.grad[n * rows.classes + i] = g * inv_batch;
        }
    }
    return result;
}

LossResult membership_loss(const Tensor& logits, int label, const MembershipParams& params) {
    const int labels[] = {label};
    return membership_loss(logits, labels, params);
}

double cumulative_loss(double ce_reference, double ce_known, double membership_known, double alpha1,
                       double alpha2) {
    return ce_reference + alpha1 * ce_known + alpha2 * membership_known;
}

}  // namespace nvfg
