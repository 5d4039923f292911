#ifndef LORTSAR_SVD_HPP
#define LORTSAR_SVD_HPP

#include <lortsar/errors.hpp>
#include <lortsar/matrix.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace lortsar {

/// Full decomposition a = u·diag(sigma)·vt.
/// u is rows×rows, vt is cols×cols, sigma has min(rows, cols) entries in
/// non-increasing order. In every column of u the entry of largest magnitude
/// (first one on ties) is non-negative; the matching row of vt carries the
/// compensating sign.
struct SvdResult {
    Matrix u;
    std::vector<double> sigma;
    Matrix vt;
};

/// Rank-k factor pair with w1·w2 = U_k·Σ_k·V_kᵀ. Σ_k is folded into w1.
struct TruncatedFactors {
    Matrix w1; // C_in × k
    Matrix w2; // k × C_out
    std::size_t k = 0;

    std::size_t parameter_count() const { return k * (w1.rows() + w2.cols()); }
};

namespace svd_detail {

inline constexpr int max_sweeps = 100;

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Rows of `basis` listed in `filled` are orthonormal. Writes an orthonormal
// completion into every other row, drawing candidates from the standard basis
// (largest residual first, lowest index on ties). Two Gram-Schmidt passes.
inline void complete_orthonormal_rows(Matrix& basis, std::vector<bool> filled) {
    const std::size_t n = basis.cols();
    for (std::size_t target = 0; target < basis.rows(); ++target) {
        if (filled[target]) continue;
        std::vector<double> best;
        double best_norm = -1.0;
        for (std::size_t cand = 0; cand < n; ++cand) {
            std::vector<double> v(n, 0.0);
            v[cand] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t r = 0; r < basis.rows(); ++r) {
                    if (!filled[r]) continue;
                    auto b = basis.row(r);
                    const double p = dot(b, v);
                    for (std::size_t i = 0; i < n; ++i) v[i] -= p * b[i];
                }
            }
            const double nv = std::sqrt(dot(v, v));
            if (nv > best_norm) {
                best_norm = nv;
                best = std::move(v);
            }
        }
        auto dst = basis.row(target);
        for (std::size_t i = 0; i < n; ++i) dst[i] = best[i] / best_norm;
        filled[target] = true;
    }
}

// Flips `line` so its largest-magnitude entry is non-negative. Returns whether
// it flipped.
inline bool canonicalize_sign(std::span<double> line) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < line.size(); ++i) {
        if (std::abs(line[i]) > std::abs(line[arg])) arg = i;
    }
    if (line.empty() || line[arg] >= 0.0) return false;
    for (double& v : line) v = -v;
    return true;
}

// One-sided (Hestenes) Jacobi for a tall matrix, rows >= cols.
inline SvdResult jacobi_tall(const Matrix& a, double tol) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();

    // Columns of A and of V are kept as rows so rotations touch contiguous memory.
    Matrix g = transpose(a);
    Matrix v = Matrix::identity(n);

    double off = 0.0;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        off = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                auto gi = g.row(i);
                auto gj = g.row(j);
                const double alpha = dot(gi, gi);
                const double beta = dot(gj, gj);
                const double gamma = dot(gi, gj);
                if (alpha == 0.0 || beta == 0.0 || gamma == 0.0) continue;
                const double rel = std::abs(gamma) / std::sqrt(alpha * beta);
                off = std::max(off, rel);
                if (rel < tol) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < m; ++r) {
                    const double x = gi[r];
                    const double y = gj[r];
                    gi[r] = c * x - s * y;
                    gj[r] = s * x + c * y;
                }
                auto vi = v.row(i);
                auto vj = v.row(j);
                for (std::size_t r = 0; r < n; ++r) {
                    const double x = vi[r];
                    const double y = vj[r];
                    vi[r] = c * x - s * y;
                    vj[r] = s * x + c * y;
                }
            }
        }
        converged = off < tol;
    }
    if (!converged) {
        throw ConvergenceError("svd: one-sided Jacobi did not converge in " + std::to_string(max_sweeps) +
                                   " sweeps, relative off-diagonal residual " + std::to_string(off),
                               off);
    }

    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) norms[i] = std::sqrt(dot(g.row(i), g.row(i)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    const double sigma_max = n ? norms[order[0]] : 0.0;
    const double null_floor = sigma_max * static_cast<double>(m) * std::numeric_limits<double>::epsilon();

    SvdResult out;
    out.sigma.resize(n);
    Matrix ut(m, m); // rows are columns of U
    std::vector<bool> filled(m, false);
    out.vt = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.sigma[k] = norms[src];
        std::copy_n(v.row(src).begin(), n, out.vt.row(k).begin());
        if (norms[src] > null_floor && norms[src] > 0.0) {
            auto dst = ut.row(k);
            auto col = g.row(src);
            for (std::size_t r = 0; r < m; ++r) dst[r] = col[r] / norms[src];
            filled[k] = true;
        }
    }
    complete_orthonormal_rows(ut, filled);
    out.u = transpose(ut);
    return out;
}

} // namespace svd_detail

/// Full SVD by one-sided Jacobi rotations. Converges when every column pair
/// satisfies |aᵢ·aⱼ| < tol·‖aᵢ‖‖aⱼ‖; throws ConvergenceError after 100 sweeps.
/// Deterministic: identical input gives bit-identical output.
inline SvdResult svd(const Matrix& a, double tol = 1e-12) {
    if (!(tol > 0.0)) throw std::invalid_argument("svd: tol must be positive");
    for (double x : a.values()) {
        if (!std::isfinite(x)) throw std::invalid_argument("svd: non-finite input");
    }

    SvdResult out;
    if (a.rows() >= a.cols()) {
        out = svd_detail::jacobi_tall(a, tol);
    } else {
        // aᵀ = U'ΣV'ᵀ  =>  a = V'ΣU'ᵀ
        SvdResult t = svd_detail::jacobi_tall(transpose(a), tol);
        out.u = transpose(t.vt);
        out.sigma = std::move(t.sigma);
        out.vt = transpose(t.u);
    }

    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    const std::size_t r = std::min(m, n);
    Matrix ut = transpose(out.u);
    for (std::size_t k = 0; k < m; ++k) {
        if (svd_detail::canonicalize_sign(ut.row(k)) && k < r) {
            for (double& x : out.vt.row(k)) x = -x;
        }
    }
    for (std::size_t k = r; k < n; ++k) svd_detail::canonicalize_sign(out.vt.row(k));
    out.u = transpose(ut);
    return out;
}

inline void check_rank(const SvdResult& s, std::size_t k, const char* who) {
    if (k < 1 || k > s.sigma.size()) {
        throw std::out_of_range(std::string(who) + ": rank " + std::to_string(k) + " outside [1, " +
                                std::to_string(s.sigma.size()) + "]");
    }
}

/// w1 = U_k·Σ_k, w2 = V_kᵀ.
inline TruncatedFactors truncate_to_factors(const SvdResult& s, std::size_t k) {
    check_rank(s, k, "truncate_to_factors");
    TruncatedFactors f;
    f.k = k;
    f.w1 = leading_columns(s.u, k);
    for (std::size_t i = 0; i < f.w1.rows(); ++i)
        for (std::size_t j = 0; j < k; ++j) f.w1(i, j) *= s.sigma[j];
    f.w2 = leading_rows(s.vt, k);
    return f;
}

/// Frobenius distance between the decomposed matrix and its rank-k truncation.
inline double reconstruction_error(const SvdResult& s, std::size_t k) {
    check_rank(s, k, "reconstruction_error");
    double tail = 0.0;
    for (std::size_t i = s.sigma.size(); i > k; --i) tail += s.sigma[i - 1] * s.sigma[i - 1];
    return std::sqrt(tail);
}

/// u·diag(sigma)·vt.
inline Matrix reconstruct(const SvdResult& s) {
    Matrix us(s.u.rows(), s.vt.rows());
    for (std::size_t i = 0; i < s.u.rows(); ++i)
        for (std::size_t j = 0; j < s.sigma.size(); ++j) us(i, j) = s.u(i, j) * s.sigma[j];
    return matmul(us, s.vt);
}

} // namespace lortsar

#endif // LORTSAR_SVD_HPP
