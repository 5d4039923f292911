#ifndef LORTSAR_MATRIX_HPP
#define LORTSAR_MATRIX_HPP

#include <lortsar/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lortsar {

/// Dense row-major matrix of doubles. Entries are checked for finiteness when
/// a matrix is built from external values; arithmetic results are not
/// re-checked.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        check_finite();
    }

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                             " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
        }
        check_finite();
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
        check_finite();
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    void check_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) throw std::invalid_argument("Matrix: non-finite entry");
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// a·b with a fixed i-k-j summation order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_string(a) + " * " + shape_string(b));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto src = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
        }
    }
    return out;
}

/// aᵀ·b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: " + shape_string(a) + "^T * " + shape_string(b));
    }
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto src = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            auto dst = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aki * src[j];
        }
    }
    return out;
}

/// a·bᵀ without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: " + shape_string(a) + " * " + shape_string(b) + "^T");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto bj = b.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
            out(i, j) = s;
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("add: " + shape_string(a) + " + " + shape_string(b));
    }
    Matrix out = a;
    auto o = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("sub: " + shape_string(a) + " - " + shape_string(b));
    }
    Matrix out = a;
    auto o = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return out;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix out = a;
    for (double& v : out.values()) v *= s;
    return out;
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("max_abs_diff: " + shape_string(a) + " vs " + shape_string(b));
    }
    double m = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
    return m;
}

/// Columns [0, k) of a.
inline Matrix leading_columns(const Matrix& a, std::size_t k) {
    Matrix out(a.rows(), k);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < k; ++j) out(i, j) = a(i, j);
    return out;
}

/// Rows [0, k) of a.
inline Matrix leading_rows(const Matrix& a, std::size_t k) {
    Matrix out(k, a.cols());
    for (std::size_t i = 0; i < k; ++i) std::copy_n(a.row(i).begin(), a.cols(), out.row(i).begin());
    return out;
}

} // namespace lortsar

#endif // LORTSAR_MATRIX_HPP
