#include "rssl/linalg.hpp"

#include "rssl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rssl {

namespace {

void require_symmetric(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw ShapeMismatch("expected a square matrix, got " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()));
    }
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = i + 1; j < m.cols(); ++j) {
            if (std::abs(m(i, j) - m(j, i)) > kSymmetryTolerance) {
                throw ShapeMismatch("matrix is not symmetric at (" + std::to_string(i) + ", " +
                                    std::to_string(j) + ")");
            }
        }
    }
}

} // namespace

Matrix cholesky_spd(const Matrix& m) {
    require_symmetric(m);
    const std::size_t n = m.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = m(j, j);
        for (std::size_t k = 0; k < j; ++k) {
            diag -= l(j, k) * l(j, k);
        }
        if (!(diag > kSpdPivotFloor)) {
            throw NotPositiveDefinite("pivot " + std::to_string(j) + " = " + std::to_string(diag));
        }
        const double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                s -= l(i, k) * l(j, k);
            }
            l(i, j) = s / ljj;
        }
    }
    return l;
}

double logdet_spd(const Matrix& m) {
    const Matrix l = cholesky_spd(m);
    double s = 0.0;
    for (std::size_t i = 0; i < l.rows(); ++i) {
        s += std::log(l(i, i));
    }
    return 2.0 * s;
}

Matrix cholesky_inverse(const Matrix& lower) {
    const std::size_t n = lower.rows();
    // Solve L L^T x = e_c for each column c.
    Matrix inv(n, n);
    std::vector<double> y(n);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = (i == c) ? 1.0 : 0.0;
            for (std::size_t k = 0; k < i; ++k) {
                s -= lower(i, k) * y[k];
            }
            y[i] = s / lower(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t k = ii + 1; k < n; ++k) {
                s -= lower(k, ii) * inv(k, c);
            }
            inv(ii, c) = s / lower(ii, ii);
        }
    }
    return symmetrize(inv);
}

Matrix spd_inverse(const Matrix& m) { return cholesky_inverse(cholesky_spd(m)); }

std::vector<double> symmetric_eigenvalues(const Matrix& m) {
    require_symmetric(m);
    const std::size_t n = m.rows();
    if (n == 0) {
        return {};
    }
    Matrix a = symmetrize(m);
    std::vector<double> d(n), e(n, 0.0);

    // Householder tridiagonalization (eigenvalues only).
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t l = i - 1;
        double h = 0.0;
        if (l > 0) {
            double scale = 0.0;
            for (std::size_t k = 0; k <= l; ++k) {
                scale += std::abs(a(i, k));
            }
            if (scale == 0.0) {
                e[i] = a(i, l);
            } else {
                for (std::size_t k = 0; k <= l; ++k) {
                    a(i, k) /= scale;
                    h += a(i, k) * a(i, k);
                }
                double f = a(i, l);
                const double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
                e[i] = scale * g;
                h -= f * g;
                a(i, l) = f - g;
                f = 0.0;
                for (std::size_t j = 0; j <= l; ++j) {
                    double gj = 0.0;
                    for (std::size_t k = 0; k <= j; ++k) {
                        gj += a(j, k) * a(i, k);
                    }
                    for (std::size_t k = j + 1; k <= l; ++k) {
                        gj += a(k, j) * a(i, k);
                    }
                    e[j] = gj / h;
                    f += e[j] * a(i, j);
                }
                const double hh = f / (h + h);
                for (std::size_t j = 0; j <= l; ++j) {
                    const double fj = a(i, j);
                    const double gj = e[j] - hh * fj;
                    e[j] = gj;
                    for (std::size_t k = 0; k <= j; ++k) {
                        a(j, k) -= fj * e[k] + gj * a(i, k);
                    }
                }
            }
        } else {
            e[i] = a(i, l);
        }
        d[i] = h;
    }
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = a(i, i);
    }

    // Implicit QL on the tridiagonal (d, e).
    for (std::size_t i = 1; i < n; ++i) {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        int iterations = 0;
        std::size_t mm = l;
        do {
            for (mm = l; mm + 1 < n; ++mm) {
                const double dd = std::abs(d[mm]) + std::abs(d[mm + 1]);
                if (std::abs(e[mm]) <= 1e-15 * dd) {
                    break;
                }
            }
            if (mm != l) {
                if (++iterations > 60) {
                    throw Error("symmetric_eigenvalues: QL iteration did not converge");
                }
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[mm] - d[l] + e[l] / (g + (g >= 0.0 ? std::abs(r) : -std::abs(r)));
                double s = 1.0;
                double c = 1.0;
                double p = 0.0;
                bool underflow = false;
                for (std::size_t ii = mm; ii-- > l;) {
                    double f = s * e[ii];
                    const double b = c * e[ii];
                    r = std::hypot(f, g);
                    e[ii + 1] = r;
                    if (r == 0.0) {
                        d[ii + 1] -= p;
                        e[mm] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[ii + 1] - p;
                    r = (d[ii] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[ii + 1] = g + p;
                    g = c * r - b;
                }
                if (underflow) {
                    continue;
                }
                d[l] -= p;
                e[l] = g;
                e[mm] = 0.0;
            }
        } while (mm != l);
    }
    std::sort(d.begin(), d.end());
    return d;
}

std::vector<double> singular_values(const Matrix& z) {
    const Matrix gram = z.rows() <= z.cols() ? matmul_nt(z, z) : matmul_tn(z, z);
    std::vector<double> eig = symmetric_eigenvalues(symmetrize(gram));
    std::vector<double> sv(eig.size());
    std::transform(eig.rbegin(), eig.rend(), sv.begin(),
                   [](double v) { return std::sqrt(std::max(v, 0.0)); });
    return sv;
}

} // namespace rssl
