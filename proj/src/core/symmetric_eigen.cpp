#include "grokscope/core/symmetric_eigen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace grokscope {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kRelativeTolerance = 1e-12;
constexpr double kSymmetryTolerance = 1e-9;

double off_diagonal_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            if (i != j) {
                s += a(i, j) * a(i, j);
            }
        }
    }
    return std::sqrt(s);
}

} // namespace

EigenDecomposition jacobi_eigen(const Matrix& m, bool want_vectors) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("jacobi_eigen: matrix is " + m.shape_string() + ", not square");
    }
    if (!m.all_finite()) {
        throw NumericError("jacobi_eigen: non-finite input");
    }
    const std::size_t n = m.rows();
    double max_abs = 0.0;
    for (double v : m.values()) {
        max_abs = std::max(max_abs, std::abs(v));
    }
    const double skew = asymmetry(m);
    if (skew > kSymmetryTolerance * std::max(1.0, max_abs)) {
        throw std::invalid_argument("jacobi_eigen: matrix is not symmetric (max |m - m^T| = " +
                                    std::to_string(skew) + ")");
    }

    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            a(i, j) = 0.5 * (m(i, j) + m(j, i));
        }
    }
    Matrix v = want_vectors ? Matrix::identity(n) : Matrix{};

    EigenDecomposition out;
    const double tol = kRelativeTolerance * a.frobenius_norm();
    for (; out.sweeps < kMaxSweeps; ++out.sweeps) {
        out.off_diagonal_norm = off_diagonal_norm(a);
        if (out.off_diagonal_norm <= tol) {
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t;
                if (std::abs(theta) > 1e150) {
                    t = 0.5 / theta;
                } else {
                    t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                }
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) {
                        continue;
                    }
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    const double np = c * akp - s * akq;
                    const double nq = s * akp + c * akq;
                    a(k, p) = np;
                    a(p, k) = np;
                    a(k, q) = nq;
                    a(q, k) = nq;
                }
                a(p, p) -= t * apq;
                a(q, q) += t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                if (want_vectors) {
                    for (std::size_t k = 0; k < n; ++k) {
                        const double vkp = v(k, p);
                        const double vkq = v(k, q);
                        v(k, p) = c * vkp - s * vkq;
                        v(k, q) = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    if (out.sweeps == kMaxSweeps) {
        out.off_diagonal_norm = off_diagonal_norm(a);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&a](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
    out.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
    }
    if (want_vectors) {
        out.vectors = Matrix(n, n);
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t r = 0; r < n; ++r) {
                out.vectors(r, k) = v(r, order[k]);
            }
        }
    }
    return out;
}

namespace {

// Householder reduction to tridiagonal form; a is destroyed. On return d holds
// the diagonal and e[0..n-2] the subdiagonal.
void tridiagonalise(Matrix& a, std::vector<double>& d, std::vector<double>& e) {
    const int n = static_cast<int>(a.rows());
    auto at = [&a](int r, int c) -> double& { return a(static_cast<std::size_t>(r), static_cast<std::size_t>(c)); };
    d.assign(static_cast<std::size_t>(n), 0.0);
    e.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = n - 1; i > 0; --i) {
        const int l = i - 1;
        double h = 0.0;
        double scale = 0.0;
        if (l > 0) {
            for (int k = 0; k <= l; ++k) {
                scale += std::abs(at(i, k));
            }
            if (scale == 0.0) {
                e[static_cast<std::size_t>(i)] = at(i, l);
            } else {
                for (int k = 0; k <= l; ++k) {
                    at(i, k) /= scale;
                    h += at(i, k) * at(i, k);
                }
                double f = at(i, l);
                double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
                e[static_cast<std::size_t>(i)] = scale * g;
                h -= f * g;
                at(i, l) = f - g;
                f = 0.0;
                for (int j = 0; j <= l; ++j) {
                    g = 0.0;
                    for (int k = 0; k <= j; ++k) {
                        g += at(j, k) * at(i, k);
                    }
                    for (int k = j + 1; k <= l; ++k) {
                        g += at(k, j) * at(i, k);
                    }
                    e[static_cast<std::size_t>(j)] = g / h;
                    f += e[static_cast<std::size_t>(j)] * at(i, j);
                }
                const double hh = f / (h + h);
                for (int j = 0; j <= l; ++j) {
                    f = at(i, j);
                    g = e[static_cast<std::size_t>(j)] - hh * f;
                    e[static_cast<std::size_t>(j)] = g;
                    for (int k = 0; k <= j; ++k) {
                        at(j, k) -= f * e[static_cast<std::size_t>(k)] + g * at(i, k);
                    }
                }
            }
        } else {
            e[static_cast<std::size_t>(i)] = at(i, l);
        }
    }
    for (int i = 0; i < n; ++i) {
        d[static_cast<std::size_t>(i)] = at(i, i);
    }
    for (int i = 1; i < n; ++i) {
        e[static_cast<std::size_t>(i - 1)] = e[static_cast<std::size_t>(i)];
    }
    e[static_cast<std::size_t>(n - 1)] = 0.0;
}

// Implicit-shift QL on a symmetric tridiagonal matrix; eigenvalues end up in d.
void tridiagonal_ql(std::vector<double>& d, std::vector<double>& e) {
    const int n = static_cast<int>(d.size());
    constexpr double eps = std::numeric_limits<double>::epsilon();
    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m = l;
        do {
            for (m = l; m < n - 1; ++m) {
                const double dd = std::abs(d[static_cast<std::size_t>(m)]) + std::abs(d[static_cast<std::size_t>(m + 1)]);
                if (std::abs(e[static_cast<std::size_t>(m)]) <= eps * dd) {
                    break;
                }
            }
            if (m != l) {
                if (++iter > 60) {
                    throw NumericError("sym_eigvals: QL iteration did not converge");
                }
                const auto L = static_cast<std::size_t>(l);
                double g = (d[L + 1] - d[L]) / (2.0 * e[L]);
                double r = std::hypot(g, 1.0);
                g = d[static_cast<std::size_t>(m)] - d[L] + e[L] / (g + std::copysign(r, g));
                double s = 1.0;
                double c = 1.0;
                double p = 0.0;
                int i = m - 1;
                for (; i >= l; --i) {
                    const auto I = static_cast<std::size_t>(i);
                    const double f = s * e[I];
                    const double b = c * e[I];
                    r = std::hypot(f, g);
                    e[I + 1] = r;
                    if (r == 0.0) {
                        d[I + 1] -= p;
                        e[static_cast<std::size_t>(m)] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[I + 1] - p;
                    r = (d[I] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[I + 1] = g + p;
                    g = c * r - b;
                }
                if (r == 0.0 && i >= l) {
                    continue;
                }
                d[L] -= p;
                e[L] = g;
                e[static_cast<std::size_t>(m)] = 0.0;
            }
        } while (m != l);
    }
}

} // namespace

std::vector<double> sym_eigvals(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("sym_eigvals: matrix is " + m.shape_string() + ", not square");
    }
    if (!m.all_finite()) {
        throw NumericError("sym_eigvals: non-finite input");
    }
    double max_abs = 0.0;
    for (double v : m.values()) {
        max_abs = std::max(max_abs, std::abs(v));
    }
    const double skew = asymmetry(m);
    if (skew > kSymmetryTolerance * std::max(1.0, max_abs)) {
        throw std::invalid_argument("sym_eigvals: matrix is not symmetric (max |m - m^T| = " +
                                    std::to_string(skew) + ")");
    }
    const std::size_t n = m.rows();
    if (n == 0) {
        return {};
    }
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            a(i, j) = 0.5 * (m(i, j) + m(j, i));
        }
    }
    std::vector<double> d;
    std::vector<double> e;
    tridiagonalise(a, d, e);
    tridiagonal_ql(d, e);
    std::sort(d.begin(), d.end(), std::greater<>());
    for (double& x : d) {
        x = std::max(x, 0.0);
    }
    return d;
}

} // namespace grokscope
