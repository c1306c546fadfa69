#pragma once

#include <cstddef>
#include <span>

#include "nvfg/tensor.hpp"

namespace nvfg {

/// Loss value plus its gradient with respect to the logits it consumed.
struct LossResult {
    double value = 0.0;
    Tensor grad;
};

struct MembershipParams {
    double lambda = 5.0;
};

/// The two risk terms of the membership loss for one sample. `correct` is
/// [1 - sigma(f_y)]^2; `wrong` is the mean of sigma(f_i)^2 over i != y.
struct MembershipRisks {
    double correct = 0.0;
    double wrong = 0.0;
};

double sigmoid(double t);
double sigmoid_derivative(double t);

/// Row-wise softmax of a [batch, c] (or [c]) tensor with max subtraction.
Tensor softmax(const Tensor& logits);

/// Mean cross-entropy over the batch; labels must lie in [0, c).
LossResult cross_entropy(const Tensor& logits, std::span<const int> labels);
LossResult cross_entropy(const Tensor& logits, int label);

/// Mean membership loss over the batch:
///   [1 - sigma(f_y)]^2 + lambda / (c - 1) * sum_{i != y} sigma(f_i)^2.
/// Requires c >= 2.
LossResult membership_loss(const Tensor& logits, std::span<const int> labels,
                           const MembershipParams& params = {});
LossResult membership_loss(const Tensor& logits, int label, const MembershipParams& params = {});

/// Risk terms for a single logit vector.
MembershipRisks membership_risks(std::span<const double> logits, int label);

/// L_ce(R) + alpha1 * L_ce(T) + alpha2 * L_m(T).
double cumulative_loss(double ce_reference, double ce_known, double membership_known,
                       double alpha1 = 1.0, double alpha2 = 1.0);

}  // namespace nvfg
