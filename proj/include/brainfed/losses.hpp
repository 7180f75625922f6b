#pragma once

#include "brainfed/tensor.hpp"

namespace brainfed {

struct LossConfig {
    double temperature = 0.1;
    bool batch_mean_softclip = true;

    void validate() const {
        if (!(temperature > 0.0)) throw contract_error("loss config: temperature must be positive");
    }
};

struct LossValue {
    double loss = 0.0;
    Tensor grad_pred;
};

/// Mean squared error, averaged over batch rows and elements:
///   loss = (1/B) sum_i mean_j (p_ij - y_ij)^2
LossValue mse(const Tensor& pred, const Tensor& target);

/// Soft-label contrastive loss over a batch. Rows are L2-normalized, then
/// prediction-row / target-row similarities at temperature tau feed a
/// cross-entropy against soft labels from the target-target similarities.
/// Divides by B unless cfg.batch_mean_softclip is off.
LossValue softclip(const Tensor& pred, const Tensor& target, const LossConfig& cfg);

/// Per-modality training objective: mse + softclip, gradients summed.
LossValue modality_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg);

namespace detail {
/// Cross-entropy of row-softmaxed logits against row-softmaxed label logits,
/// with log-sum-exp stabilization. Exposed for property tests.
double softmax_cross_entropy_row(const std::vector<double>& label_logits,
                                 const std::vector<double>& pred_logits);
}  // namespace detail

}  // namespace brainfed
