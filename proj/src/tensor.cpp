#include "brainfed/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace brainfed {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shp) {
    std::size_t n = 1;
    for (std::size_t d : shp) n *= d;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shp, std::vector<double> vals)
    : shape(std::move(shp)), data(std::move(vals)) {
    if (shape_product(shape) != data.size()) {
        throw dim_error("tensor: shape product " + std::to_string(shape_product(shape)) +
                        " does not match data length " + std::to_string(data.size()));
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shp) {
    std::size_t n = shape_product(shp);
    return Tensor(std::move(shp), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shp, double value) {
    std::size_t n = shape_product(shp);
    return Tensor(std::move(shp), std::vector<double>(n, value));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw dim_error("tensor: rows() requires rank 2, got rank " + std::to_string(rank()));
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw dim_error("tensor: cols() requires rank 2, got rank " + std::to_string(rank()));
    return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }

double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) os << 'x';
        os << t.shape[i];
    }
    os << ']';
    return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw dim_error("matmul: requires rank-2 tensors, got " + shape_str(a) + " and " + shape_str(b));
    }
    if (a.cols() != b.rows()) {
        throw dim_error("matmul: inner dimensions disagree: " + shape_str(a) + " x " + shape_str(b));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    // i,k,j ordering: stride-1 access on b and out, while each out element
    // still accumulates its k terms in ascending order.
    const double* ad = a.data.data();
    const double* bd = b.data.data();
    double* od = out.data.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = ad[i * k + kk];
            const double* brow = bd + kk * n;
            double* orow = od + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw dim_error("hadamard: shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    }
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw dim_error("transpose: requires rank-2 tensor, got " + shape_str(a));
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = a.data[i * n + j];
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw dim_error("add: shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw dim_error("sub: shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.data) v *= s;
    return out;
}

void axpy(Tensor& dst, const Tensor& src, double s) {
    if (!dst.same_shape(src)) {
        throw dim_error("axpy: shape mismatch: " + shape_str(dst) + " vs " + shape_str(src));
    }
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += s * src.data[i];
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t splitmix_finalize(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

// ln(x) for x in (0,1]: frexp-based range reduction plus the atanh series.
// Only +,-,*,/ on doubles, so the result is identical on any IEEE platform.
double det_log(double x) {
    int e = 0;
    double m = std::frexp(x, &e);  // m in [0.5, 1)
    if (m < 0.70710678118654752440) {
        m *= 2.0;
        e -= 1;
    }
    const double s = (m - 1.0) / (m + 1.0);
    const double s2 = s * s;
    // atanh series: ln(m) = 2*(s + s^3/3 + ... + s^21/21); |s| <= 0.1716 so
    // the truncated tail is below one ulp.
    double acc = 1.0 / 21.0;
    acc = acc * s2 + 1.0 / 19.0;
    acc = acc * s2 + 1.0 / 17.0;
    acc = acc * s2 + 1.0 / 15.0;
    acc = acc * s2 + 1.0 / 13.0;
    acc = acc * s2 + 1.0 / 11.0;
    acc = acc * s2 + 1.0 / 9.0;
    acc = acc * s2 + 1.0 / 7.0;
    acc = acc * s2 + 1.0 / 5.0;
    acc = acc * s2 + 1.0 / 3.0;
    acc = acc * s2 + 1.0;
    const double ln2 = 0.69314718055994530942;
    return 2.0 * s * acc + static_cast<double>(e) * ln2;
}

// cos(2*pi*u) for u in [0,1), via quarter-turn reduction and fixed Taylor
// polynomials on |a| <= pi/4.
double det_cos_twopi(double u) {
    const double w = 4.0 * u;              // in [0,4)
    const double q = std::floor(w + 0.5);  // nearest quarter turn
    const double f = w - q;                // in [-0.5, 0.5]
    const double a = f * 1.57079632679489661923;
    const double a2 = a * a;
    double c = 1.0 / 40320.0;
    c = c * a2 - 1.0 / 720.0;
    c = c * a2 + 1.0 / 24.0;
    c = c * a2 - 0.5;
    c = c * a2 + 1.0;
    double s = -1.0 / 5040.0;
    s = s * a2 + 1.0 / 120.0;
    s = s * a2 - 1.0 / 6.0;
    s = s * a2 + 1.0;
    s *= a;
    switch (static_cast<int>(q) & 3) {
        case 0: return c;
        case 1: return -s;
        case 2: return -c;
        default: return s;
    }
}

}  // namespace

std::uint64_t Rng::next_u64() {
    ++counter;
    return splitmix_finalize(seed + counter * kGolden);
}

double Rng::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
    double u1 = next_unit();
    const double u2 = next_unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * det_log(u1));
    return r * det_cos_twopi(u2);
}

Rng Rng::fork(std::uint64_t salt) const {
    return Rng(splitmix_finalize(seed ^ (salt * 0xD2B74407B1CE6E93ULL) ^ kGolden));
}

Rng Rng::fork(std::string_view label) const {
    return fork(fnv1a64(label.data(), label.size()));
}

Tensor gaussian(Rng& rng, std::vector<std::size_t> shape) {
    Tensor out = Tensor::zeros(std::move(shape));
    for (double& v : out.data) v = rng.next_gaussian();
    return out;
}

std::uint64_t fnv1a64(const void* bytes, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace brainfed
