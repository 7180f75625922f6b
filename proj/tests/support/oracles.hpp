#pragma once

// Independent reference computations the implementation is checked against.
// Nothing here calls back into the code paths under test.

#include <cmath>
#include <cstddef>
#include <vector>

#include "brainfed/tensor.hpp"

namespace testsupport {

/// Naive triple-loop matrix product, ascending inner index.
inline brainfed::Tensor naive_matmul(const brainfed::Tensor& a, const brainfed::Tensor& b) {
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    brainfed::Tensor out = brainfed::Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a.data[i * k + kk] * b.data[kk * n + j];
            out.data[i * n + j] = acc;
        }
    }
    return out;
}

inline double rel_err(double got, double want) {
    const double denom = std::max(std::abs(want), 1e-300);
    return std::abs(got - want) / denom;
}

/// Max elementwise relative error with an absolute floor for near-zero
/// reference values.
inline double max_rel_err(const brainfed::Tensor& got, const brainfed::Tensor& want,
                          double abs_floor = 1e-12) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.data.size(); ++i) {
        const double denom = std::max(std::abs(want.data[i]), abs_floor);
        worst = std::max(worst, std::abs(got.data[i] - want.data[i]) / denom);
    }
    return worst;
}

/// Central finite difference of a scalar function of one coordinate.
template <typename F>
double central_diff(F&& f, double& slot, double eps) {
    const double saved = slot;
    slot = saved + eps;
    const double up = f();
    slot = saved - eps;
    const double down = f();
    slot = saved;
    return (up - down) / (2.0 * eps);
}

}  // namespace testsupport
