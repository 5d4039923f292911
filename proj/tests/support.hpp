#ifndef LORTSAR_TESTS_SUPPORT_HPP
#define LORTSAR_TESTS_SUPPORT_HPP

// Test-only helpers: random inputs and oracles that are independent of the
// library's code paths (naive loops, central finite differences).

#include <lortsar/matrix.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>

namespace lortsar::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint32_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = dist(gen);
    return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

/// Σ r∘y: a scalar probe whose gradient w.r.t. y is r.
inline double weighted_sum(const Matrix& y, const Matrix& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * r.values()[i];
    return s;
}

/// |a − n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient
/// is ~0 from turning round-off into a large ratio.
inline double rel_err(double analytic, double numeric, double floor = 1e-3) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest rel_err between `analytic` and the central difference of `f`
/// w.r.t. every entry of `values` (perturbed in place and restored).
inline double max_fd_error(std::span<double> values, std::span<const double> analytic, const std::function<double()>& f,
                           double h = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double up = f();
        values[i] = saved - h;
        const double down = f();
        values[i] = saved;
        worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

} // namespace lortsar::test

#endif // LORTSAR_TESTS_SUPPORT_HPP
