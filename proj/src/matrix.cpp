#include "rssl/matrix.hpp"

#include "rssl/errors.hpp"
#include "rssl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rssl {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
    }
}

// Rows per parallel task; keeps tiny products on the calling thread.
std::size_t row_grain(std::size_t work_per_row) {
    constexpr std::size_t target = 1 << 15;
    return std::max<std::size_t>(1, target / std::max<std::size_t>(1, work_per_row));
}

// out(i, :) += sum_k a(i, k) * b(k, :), k ascending. Each output entry sees
// the same sequence of operations whatever the row partition is.
void gemm_rows(const Matrix& a, const Matrix& b, Matrix& out) {
    const std::size_t inner = a.cols();
    const std::size_t n = b.cols();
    parallel_for(a.rows(), row_grain(inner * n), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            double* dst = out.data() + i * n;
            const double* arow = a.data() + i * inner;
            for (std::size_t k = 0; k < inner; ++k) {
                const double s = arow[k];
                if (s == 0.0) {
                    continue;
                }
                const double* src = b.data() + k * n;
                for (std::size_t j = 0; j < n; ++j) {
                    dst[j] += s * src[j];
                }
            }
        }
    });
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw ShapeMismatch("value count " + std::to_string(values_.size()) + " for " +
                            std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeMismatch("ragged initializer list");
        }
        values_.insert(values_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) {
        m(i, i) = diag[i];
    }
    return m;
}

Matrix Matrix::column(std::span<const double> values) {
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

Matrix Matrix::col_block(std::size_t first, std::size_t count) const {
    if (first + count > cols_) {
        throw ShapeMismatch("column block out of range");
    }
    Matrix out(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r) {
        std::copy_n(values_.data() + r * cols_ + first, count, out.data() + r * count);
    }
    return out;
}

void Matrix::set_col_block(std::size_t first, const Matrix& block) {
    if (block.rows() != rows_ || first + block.cols() > cols_) {
        throw ShapeMismatch("set_col_block out of range");
    }
    for (std::size_t r = 0; r < rows_; ++r) {
        std::copy_n(block.data() + r * block.cols(), block.cols(), values_.data() + r * cols_ + first);
    }
}

std::vector<double> Matrix::col(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        out[r] = (*this)(r, c);
    }
    return out;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "add");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        values_[i] += other.values_[i];
    }
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "sub");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        values_[i] -= other.values_[i];
    }
    return *this;
}

Matrix& Matrix::operator*=(double s) noexcept {
    for (double& v : values_) {
        v *= s;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = a.data()[i] * b.data()[i];
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeMismatch("matmul " + shape_str(a) + " * " + shape_str(b));
    }
    Matrix out(a.rows(), b.cols());
    gemm_rows(a, b, out);
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeMismatch("matmul_tn " + shape_str(a) + "^T * " + shape_str(b));
    }
    Matrix out(a.cols(), b.cols());
    gemm_rows(a.transposed(), b, out);
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeMismatch("matmul_nt " + shape_str(a) + " * " + shape_str(b) + "^T");
    }
    Matrix out(a.rows(), b.rows());
    gemm_rows(a, b.transposed(), out);
    return out;
}

Matrix hcat(std::span<const Matrix> blocks) {
    if (blocks.empty()) {
        return {};
    }
    const std::size_t rows = blocks.front().rows();
    std::size_t cols = 0;
    for (const auto& b : blocks) {
        if (b.rows() != rows) {
            throw ShapeMismatch("hcat row count");
        }
        cols += b.cols();
    }
    Matrix out(rows, cols);
    std::size_t at = 0;
    for (const auto& b : blocks) {
        out.set_col_block(at, b);
        at += b.cols();
    }
    return out;
}

double sum(const Matrix& m) noexcept {
    double s = 0.0;
    for (double v : m.values()) {
        s += v;
    }
    return s;
}

double trace(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw ShapeMismatch("trace of non-square " + shape_str(m));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        s += m(i, i);
    }
    return s;
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "frobenius_dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a.data()[i] * b.data()[i];
    }
    return s;
}

double frobenius_norm(const Matrix& m) noexcept {
    double s = 0.0;
    for (double v : m.values()) {
        s += v * v;
    }
    return std::sqrt(s);
}

double max_abs(const Matrix& m) noexcept {
    double best = 0.0;
    for (double v : m.values()) {
        best = std::max(best, std::abs(v));
    }
    return best;
}

Matrix symmetrize(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw ShapeMismatch("symmetrize of non-square " + shape_str(m));
    }
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) = 0.5 * (m(i, j) + m(j, i));
        }
    }
    return out;
}

} // namespace rssl
