#pragma once

#include "rssl/matrix.hpp"

#include <vector>

namespace rssl {

/// Pivots at or below this value mark the input as degenerate.
inline constexpr double kSpdPivotFloor = 1e-12;
/// Maximum asymmetry |m_ij - m_ji| accepted as "symmetric".
inline constexpr double kSymmetryTolerance = 1e-10;

/// Lower-triangular L with L L^T = m. Throws NotPositiveDefinite when a pivot
/// is <= kSpdPivotFloor and ShapeMismatch for non-square or asymmetric input.
Matrix cholesky_spd(const Matrix& m);

/// log det m = 2 sum_i ln L_ii.
double logdet_spd(const Matrix& m);

/// m^{-1} from the Cholesky factor (two triangular solves per column).
Matrix spd_inverse(const Matrix& m);
Matrix cholesky_inverse(const Matrix& lower);

/// Eigenvalues of a symmetric matrix, ascending. Householder reduction to
/// tridiagonal form followed by implicit QL.
std::vector<double> symmetric_eigenvalues(const Matrix& m);

/// Singular values of z, descending, via the eigenvalues of the smaller Gram
/// matrix. Tiny negative eigenvalues from rounding are clamped to zero.
std::vector<double> singular_values(const Matrix& z);

} // namespace rssl
