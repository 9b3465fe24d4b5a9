#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace rssl {

/// Dense row-major real64 matrix. Column vectors are the unit of "one
/// sample" everywhere in the library: embeddings are d x b, flattened image
/// batches are pixels x n.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> diag);
    static Matrix column(std::span<const double> values);

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

    [[nodiscard]] std::span<double> values() noexcept { return values_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] double* data() noexcept { return values_.data(); }
    [[nodiscard]] const double* data() const noexcept { return values_.data(); }
    [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * cols_, cols_};
    }

    [[nodiscard]] bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    [[nodiscard]] bool all_finite() const noexcept;

    [[nodiscard]] Matrix transposed() const;
    /// Copy of columns [first, first + count).
    [[nodiscard]] Matrix col_block(std::size_t first, std::size_t count) const;
    void set_col_block(std::size_t first, const Matrix& block);
    [[nodiscard]] std::vector<double> col(std::size_t c) const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s) noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix hadamard(const Matrix& a, const Matrix& b);

/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Horizontal concatenation; all blocks share the row count.
Matrix hcat(std::span<const Matrix> blocks);

double sum(const Matrix& m) noexcept;
double trace(const Matrix& m);
/// sum_ij a_ij * b_ij, which equals trace(a^T b).
double frobenius_dot(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m) noexcept;
double max_abs(const Matrix& m) noexcept;

/// Symmetric part (m + m^T) / 2.
Matrix symmetrize(const Matrix& m);

} // namespace rssl
