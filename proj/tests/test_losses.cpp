#include <doctest.h>

#include <cmath>
#include <numeric>

#include "brainfed/losses.hpp"
#include "support/oracles.hpp"

using namespace brainfed;

namespace {

// Direct double-sum evaluation of the soft-label contrastive loss on
// normalized rows, no log-sum-exp tricks.
double softclip_oracle(const Tensor& pred, const Tensor& target, double tau, bool batch_mean) {
    const std::size_t b = pred.rows(), e = pred.cols();
    auto normalize = [e](const Tensor& t, std::size_t row) {
        std::vector<double> out(e);
        double sq = 0.0;
        for (std::size_t j = 0; j < e; ++j) sq += t.data[row * e + j] * t.data[row * e + j];
        const double norm = std::sqrt(sq);
        for (std::size_t j = 0; j < e; ++j) out[j] = t.data[row * e + j] / norm;
        return out;
    };
    std::vector<std::vector<double>> p(b), y(b);
    for (std::size_t i = 0; i < b; ++i) {
        p[i] = normalize(pred, i);
        y[i] = normalize(target, i);
    }
    auto dot = [e](const std::vector<double>& a, const std::vector<double>& c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < e; ++j) acc += a[j] * c[j];
        return acc;
    };
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        double zy = 0.0, zp = 0.0;
        for (std::size_t k = 0; k < b; ++k) {
            zy += std::exp(dot(y[i], y[k]) / tau);
            zp += std::exp(dot(p[i], y[k]) / tau);
        }
        for (std::size_t j = 0; j < b; ++j) {
            const double q = std::exp(dot(y[i], y[j]) / tau) / zy;
            const double r = std::exp(dot(p[i], y[j]) / tau) / zp;
            loss -= q * std::log(r);
        }
    }
    return batch_mean ? loss / static_cast<double>(b) : loss;
}

double mse_oracle(const Tensor& pred, const Tensor& target) {
    const std::size_t b = pred.rows(), e = pred.cols();
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < e; ++j) {
            const double d = pred.data[i * e + j] - target.data[i * e + j];
            row += d * d;
        }
        loss += row / static_cast<double>(e);
    }
    return loss / static_cast<double>(b);
}

}  // namespace

TEST_CASE("mse trivial cases") {
    const Tensor a({1, 2}, {3, 4});
    const LossValue zero = mse(a, a);
    CHECK(zero.loss == 0.0);
    for (double v : zero.grad_pred.data) CHECK(v == 0.0);

    const LossValue hand = mse(Tensor({1, 2}, {0, 0}), Tensor({1, 2}, {3, 4}));
    CHECK(hand.loss == doctest::Approx(12.5).epsilon(1e-15));
}

TEST_CASE("mse rejects degenerate batch and shape mismatch") {
    CHECK_THROWS_AS((void)mse(Tensor::zeros({0, 2}), Tensor::zeros({0, 2})), value_error);
    CHECK_THROWS_AS((void)mse(Tensor::zeros({1, 2}), Tensor::zeros({1, 3})), dim_error);
}

TEST_CASE("mse matches the scalar-loop oracle") {
    Rng rng(31);
    const Tensor pred = gaussian(rng, {4, 6});
    const Tensor target = gaussian(rng, {4, 6});
    const LossValue got = mse(pred, target);
    CHECK(testsupport::rel_err(got.loss, mse_oracle(pred, target)) <= 1e-12);

    // Gradient against central differences of the oracle.
    Tensor probe = pred;
    for (std::size_t idx = 0; idx < probe.numel(); idx += 5) {
        const double fd = testsupport::central_diff(
            [&] { return mse_oracle(probe, target); }, probe.data[idx], 1e-6);
        CHECK(testsupport::rel_err(got.grad_pred.data[idx], fd) <= 1e-5);
    }
}

TEST_CASE("softclip at batch size one is exactly zero") {
    LossConfig cfg;
    Rng rng(32);
    const Tensor pred = gaussian(rng, {1, 5});
    const Tensor target = gaussian(rng, {1, 5});
    const LossValue out = softclip(pred, target, cfg);
    CHECK(out.loss == 0.0);
}

TEST_CASE("softclip names the zero-norm row") {
    LossConfig cfg;
    Tensor pred = Tensor::full({3, 2}, 1.0);
    pred.data[2] = 0.0;
    pred.data[3] = 0.0;  // row 1 all-zero
    const Tensor target = Tensor::full({3, 2}, 1.0);
    CHECK_THROWS_WITH_AS((void)softclip(pred, target, cfg), doctest::Contains("row 1"), value_error);
}

TEST_CASE("softclip matches double-sum oracle and finite differences") {
    LossConfig cfg;
    cfg.temperature = 0.17;
    Rng rng(33);
    const Tensor pred = gaussian(rng, {3, 4});
    const Tensor target = gaussian(rng, {3, 4});
    const LossValue got = softclip(pred, target, cfg);
    CHECK(testsupport::rel_err(got.loss, softclip_oracle(pred, target, cfg.temperature, true)) <= 1e-12);

    Tensor probe = pred;
    for (std::size_t idx = 0; idx < probe.numel(); ++idx) {
        const double fd = testsupport::central_diff(
            [&] { return softclip_oracle(probe, target, cfg.temperature, true); }, probe.data[idx],
            1e-6);
        if (std::abs(fd) > 1e-9) {
            CHECK(testsupport::rel_err(got.grad_pred.data[idx], fd) <= 1e-5);
        }
    }

    cfg.batch_mean_softclip = false;
    const LossValue raw = softclip(pred, target, cfg);
    CHECK(testsupport::rel_err(raw.loss, softclip_oracle(pred, target, cfg.temperature, false)) <=
          1e-12);
}

TEST_CASE("softclip gradient vanishes along tangent directions at the optimum") {
    // pred == target: moving pred along any direction that preserves row
    // normalization leaves the loss stationary.
    LossConfig cfg;
    cfg.temperature = 0.3;
    Rng rng(34);
    const Tensor target = gaussian(rng, {2, 4});
    const LossValue at_opt = softclip(target, target, cfg);

    const std::size_t e = target.cols();
    for (std::size_t row = 0; row < 2; ++row) {
        // Build a tangent: random direction minus its component along the row.
        Tensor dir = gaussian(rng, {e});
        double norm_sq = 0.0, dot = 0.0;
        for (std::size_t j = 0; j < e; ++j) {
            norm_sq += target.data[row * e + j] * target.data[row * e + j];
            dot += dir.data[j] * target.data[row * e + j];
        }
        for (std::size_t j = 0; j < e; ++j) {
            dir.data[j] -= dot / norm_sq * target.data[row * e + j];
        }
        double directional = 0.0;
        for (std::size_t j = 0; j < e; ++j) {
            directional += at_opt.grad_pred.data[row * e + j] * dir.data[j];
        }
        CHECK(std::abs(directional) <= 1e-6);
    }
}

TEST_CASE("softclip shift invariance of the row cross-entropy") {
    Rng rng(35);
    std::vector<double> labels(6), logits(6);
    for (auto& v : labels) v = rng.next_gaussian();
    for (auto& v : logits) v = rng.next_gaussian();
    const double base = detail::softmax_cross_entropy_row(labels, logits);
    std::vector<double> shifted = logits;
    for (auto& v : shifted) v += 3.75;
    CHECK(std::abs(detail::softmax_cross_entropy_row(labels, shifted) - base) <= 1e-12);
}

TEST_CASE("cross-entropy dominates entropy") {
    LossConfig cfg;
    Rng rng(36);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor pred = gaussian(rng, {4, 5});
        const Tensor target = gaussian(rng, {4, 5});
        const double ce = softclip(pred, target, cfg).loss;
        const double entropy = softclip(target, target, cfg).loss;
        CHECK(ce >= entropy - 1e-9);
    }
}

TEST_CASE("mse is nonnegative") {
    Rng rng(39);
    for (int trial = 0; trial < 25; ++trial) {
        const Tensor pred = gaussian(rng, {3, 4});
        const Tensor target = gaussian(rng, {3, 4});
        CHECK(mse(pred, target).loss >= 0.0);
    }
}

TEST_CASE("losses are permutation equivariant over the batch") {
    LossConfig cfg;
    Rng rng(37);
    const Tensor pred = gaussian(rng, {5, 3});
    const Tensor target = gaussian(rng, {5, 3});
    // Rotate rows by two.
    auto rotate = [](const Tensor& t, std::size_t shift) {
        Tensor out = t;
        const std::size_t b = t.rows(), e = t.cols();
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t src = (i + shift) % b;
            for (std::size_t j = 0; j < e; ++j) out.data[i * e + j] = t.data[src * e + j];
        }
        return out;
    };
    CHECK(std::abs(softclip(pred, target, cfg).loss -
                   softclip(rotate(pred, 2), rotate(target, 2), cfg).loss) <= 1e-12);
    CHECK(std::abs(mse(pred, target).loss - mse(rotate(pred, 2), rotate(target, 2)).loss) <= 1e-12);
}

TEST_CASE("modality loss is the exact sum and its gradient checks out") {
    LossConfig cfg;
    Rng rng(38);
    const Tensor pred = gaussian(rng, {3, 4});
    const Tensor target = gaussian(rng, {3, 4});

    const LossValue total = modality_loss(pred, target, cfg);
    const LossValue a = mse(pred, target);
    const LossValue b = softclip(pred, target, cfg);
    CHECK(total.loss == a.loss + b.loss);
    for (std::size_t i = 0; i < total.grad_pred.numel(); ++i) {
        CHECK(total.grad_pred.data[i] == a.grad_pred.data[i] + b.grad_pred.data[i]);
    }

    // pred == target at B=1 vanishes entirely.
    const Tensor one = gaussian(rng, {1, 4});
    CHECK(modality_loss(one, one, cfg).loss == 0.0);

    // Full-gradient finite-difference check through both terms.
    Tensor probe = pred;
    auto full = [&] {
        return mse_oracle(probe, target) + softclip_oracle(probe, target, cfg.temperature, true);
    };
    for (std::size_t idx = 0; idx < probe.numel(); idx += 3) {
        const double fd = testsupport::central_diff(full, probe.data[idx], 1e-6);
        if (std::abs(fd) > 1e-9) {
            CHECK(testsupport::rel_err(total.grad_pred.data[idx], fd) <= 1e-5);
        }
    }
}
