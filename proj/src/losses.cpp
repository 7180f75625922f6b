#include "brainfed/losses.hpp"

#include <algorithm>
#include <cmath>

namespace brainfed {

namespace {

void check_pair(const Tensor& pred, const Tensor& target, const char* op) {
    if (pred.rank() != 2 || target.rank() != 2 || !pred.same_shape(target)) {
        throw dim_error(std::string(op) + ": shapes must match and be rank 2, got " + shape_str(pred) +
                        " vs " + shape_str(target));
    }
    if (pred.rows() == 0) {
        throw value_error(std::string(op) + ": degenerate batch of size 0");
    }
}

// Rows scaled to unit L2 norm; returns the original norms.
Tensor normalize_rows(const Tensor& x, std::vector<double>& norms, const char* what) {
    const std::size_t b = x.rows(), e = x.cols();
    Tensor out = x;
    norms.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < e; ++j) sq += x.data[i * e + j] * x.data[i * e + j];
        const double norm = std::sqrt(sq);
        if (norm == 0.0) {
            throw value_error(std::string(what) + ": cannot normalize zero-norm row " + std::to_string(i));
        }
        norms[i] = norm;
        for (std::size_t j = 0; j < e; ++j) out.data[i * e + j] /= norm;
    }
    return out;
}

double log_sum_exp(const double* row, std::size_t n) {
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(row[j] - mx);
    return mx + std::log(acc);
}

}  // namespace

namespace detail {

double softmax_cross_entropy_row(const std::vector<double>& label_logits,
                                 const std::vector<double>& pred_logits) {
    const std::size_t n = label_logits.size();
    const double lse_label = log_sum_exp(label_logits.data(), n);
    const double lse_pred = log_sum_exp(pred_logits.data(), n);
    double loss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double q = std::exp(label_logits[j] - lse_label);
        loss -= q * (pred_logits[j] - lse_pred);
    }
    return loss;
}

}  // namespace detail

LossValue mse(const Tensor& pred, const Tensor& target) {
    check_pair(pred, target, "mse");
    const std::size_t b = pred.rows(), e = pred.cols();
    const double inv = 1.0 / (static_cast<double>(b) * static_cast<double>(e));
    LossValue out;
    out.grad_pred = Tensor::zeros(pred.shape);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        out.loss += d * d * inv;
        out.grad_pred.data[i] = 2.0 * d * inv;
    }
    return out;
}

LossValue softclip(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
    check_pair(pred, target, "softclip");
    cfg.validate();
    const std::size_t b = pred.rows(), e = pred.cols();
    const double inv_tau = 1.0 / cfg.temperature;
    const double scale = cfg.batch_mean_softclip ? 1.0 / static_cast<double>(b) : 1.0;

    std::vector<double> pred_norms, target_norms;
    const Tensor target_hat = normalize_rows(target, target_norms, "softclip target");
    const Tensor pred_hat = normalize_rows(pred, pred_norms, "softclip pred");

    // Label logits A = Yhat Yhat^T / tau, prediction logits C = Phat Yhat^T / tau.
    const Tensor target_hat_t = transpose(target_hat);
    Tensor label_logits = matmul(target_hat, target_hat_t);
    Tensor pred_logits = matmul(pred_hat, target_hat_t);
    for (double& v : label_logits.data) v *= inv_tau;
    for (double& v : pred_logits.data) v *= inv_tau;

    LossValue out;
    // dloss/dC, reused as scratch.
    Tensor dlogits = Tensor::zeros({b, b});
    for (std::size_t i = 0; i < b; ++i) {
        const double* arow = label_logits.data.data() + i * b;
        const double* crow = pred_logits.data.data() + i * b;
        const double lse_a = log_sum_exp(arow, b);
        const double lse_c = log_sum_exp(crow, b);
        for (std::size_t j = 0; j < b; ++j) {
            const double q = std::exp(arow[j] - lse_a);
            const double r = std::exp(crow[j] - lse_c);
            out.loss -= scale * q * (crow[j] - lse_c);
            dlogits.data[i * b + j] = scale * (r - q);
        }
    }

    // Through the logits: d/d(pred_hat) = dlogits Yhat / tau, then through the
    // row normalization: g - (g . phat) phat, divided by the original norm.
    Tensor grad_hat = matmul(dlogits, target_hat);
    for (double& v : grad_hat.data) v *= inv_tau;
    out.grad_pred = Tensor::zeros(pred.shape);
    for (std::size_t i = 0; i < b; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < e; ++j) dot += grad_hat.data[i * e + j] * pred_hat.data[i * e + j];
        for (std::size_t j = 0; j < e; ++j) {
            out.grad_pred.data[i * e + j] =
                (grad_hat.data[i * e + j] - dot * pred_hat.data[i * e + j]) / pred_norms[i];
        }
    }
    return out;
}

LossValue modality_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
    LossValue a = mse(pred, target);
    LossValue b = softclip(pred, target, cfg);
    LossValue out;
    out.loss = a.loss + b.loss;
    out.grad_pred = add(a.grad_pred, b.grad_pred);
    return out;
}

}  // namespace brainfed
