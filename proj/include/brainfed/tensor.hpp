#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "brainfed/errors.hpp"

namespace brainfed {

/// Dense row-major tensor of 64-bit floats. The one numeric value type
/// everything else is built on.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shp, std::vector<double> vals);

    static Tensor zeros(std::vector<std::size_t> shp);
    static Tensor full(std::vector<std::size_t> shp, double value);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // 2-D accessors; rows()/cols() require rank 2.
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    bool operator==(const Tensor& other) const {
        return shape == other.shape && data == other.data;
    }
};

std::string shape_str(const Tensor& t);

/// Row-major matrix product in 64-bit arithmetic. For every output element
/// the contraction is summed in ascending k order, so results are bit-stable
/// regardless of loop blocking.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise product; shapes must match exactly.
Tensor hadamard(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// dst += s * src
void axpy(Tensor& dst, const Tensor& src, double s);

/// Counter-based deterministic generator (splitmix64 finalizer over a
/// seed + draw counter). Same seed gives the same draw sequence on any
/// IEEE-754 platform; no global state. Gaussian draws use Box-Muller with
/// local log/cos evaluations built from basic arithmetic only, so the
/// stream does not depend on libm rounding.
struct Rng {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    Rng() = default;
    explicit Rng(std::uint64_t s) : seed(s) {}

    std::uint64_t next_u64();
    /// Uniform draw in [0,1) with 53-bit resolution.
    double next_unit();
    /// Standard-normal draw; consumes exactly two u64 draws.
    double next_gaussian();

    /// Independent derived stream; deterministic function of (seed, salt).
    Rng fork(std::uint64_t salt) const;
    Rng fork(std::string_view label) const;
};

/// Tensor of i.i.d. standard-normal draws; advances rng.
Tensor gaussian(Rng& rng, std::vector<std::size_t> shape);

std::uint64_t fnv1a64(const void* bytes, std::size_t len);

}  // namespace brainfed
