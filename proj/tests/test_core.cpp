#include "doctest.h"

#include "grokscope/core/matrix.hpp"
#include "grokscope/core/rng.hpp"
#include "grokscope/core/symmetric_eigen.hpp"
#include "test_support.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

using namespace grokscope;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double s = 0.0L;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                s += static_cast<long double>(a(i, k)) * b(k, j);
            }
            c(i, j) = static_cast<double>(s);
        }
    }
    return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

Matrix random_symmetric(Rng& rng, std::size_t n) {
    Matrix m = testing::random_matrix(rng, n, n);
    return (m + m.transposed()) * 0.5;
}

} // namespace

TEST_CASE("matrix construction and element access") {
    Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(1, 2) == 6);
    CHECK(m.shape_string() == "2x3");
    CHECK(m.transposed()(2, 1) == 6);
    CHECK(m.sum() == 21);
    CHECK(m.sum_squares() == 91);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), std::invalid_argument);
    CHECK(Matrix::identity(3)(1, 1) == 1.0);
    CHECK(Matrix::identity(3)(0, 1) == 0.0);
    const std::vector<double> d{2, 3};
    CHECK(Matrix::diagonal(d) == Matrix::from_rows({{2, 0}, {0, 3}}));
}

TEST_CASE("matrix arithmetic and finiteness") {
    Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    Matrix b = Matrix::from_rows({{1, 1}, {1, 1}});
    CHECK((a + b) == Matrix::from_rows({{2, 3}, {4, 5}}));
    CHECK((a - b) == Matrix::from_rows({{0, 1}, {2, 3}}));
    CHECK((a * 2.0) == Matrix::from_rows({{2, 4}, {6, 8}}));
    CHECK_THROWS_AS(a += Matrix(3, 2), std::invalid_argument);
    CHECK(a.all_finite());
    a(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(a.all_finite());
}

TEST_CASE("gemm matches a long-double reference for every transpose combination") {
    Rng rng(11);
    const Matrix a = testing::random_matrix(rng, 7, 5);
    const Matrix b = testing::random_matrix(rng, 5, 9);
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-13);

    Matrix c;
    gemm(a.transposed(), true, b, false, c);
    CHECK(max_abs_diff(c, naive_matmul(a, b)) < 1e-13);
    gemm(a, false, b.transposed(), true, c);
    CHECK(max_abs_diff(c, naive_matmul(a, b)) < 1e-13);
    gemm(a.transposed(), true, b.transposed(), true, c);
    CHECK(max_abs_diff(c, naive_matmul(a, b)) < 1e-13);

    // beta = 1 accumulates.
    Matrix acc = naive_matmul(a, b);
    gemm(a, false, b, false, acc, 1.0);
    CHECK(max_abs_diff(acc, naive_matmul(a, b) * 2.0) < 1e-12);
}

TEST_CASE("gemm reports both shapes on mismatch") {
    Matrix c;
    try {
        gemm(Matrix(2, 3), false, Matrix(4, 5), false, c);
        FAIL("expected an exception");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("4x5") != std::string::npos);
    }
}

TEST_CASE("rng is deterministic and streams are independent") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng s1 = Rng::stream(7, "split");
    Rng s2 = Rng::stream(7, "init");
    Rng s3 = Rng::stream(8, "split");
    CHECK(s1.key() != s2.key());
    CHECK(s1.key() != s3.key());
    CHECK(Rng::stream(7, "split").next_u64() == s1.next_u64());
}

TEST_CASE("rng distributions") {
    Rng rng(3);
    double sum = 0.0;
    double sum_sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        const double z = rng.normal();
        sum += z;
        sum_sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sum_sq / n - 1.0) < 0.02);

    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const auto k = rng.below(7);
        REQUIRE(k < 7);
        ++counts[k];
    }
    for (int c : counts) {
        CHECK(std::abs(c - 10000) < 500);
    }
}

TEST_CASE("sampling without replacement gives distinct indices") {
    Rng rng(5);
    const auto idx = rng.sample_without_replacement(100, 40);
    CHECK(idx.size() == 40);
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 40);
    CHECK(*std::max_element(idx.begin(), idx.end()) < 100);
    CHECK_THROWS(rng.sample_without_replacement(3, 4));
}

TEST_CASE("shuffle is a permutation") {
    Rng rng(9);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) {
        v[static_cast<std::size_t>(i)] = i;
    }
    rng.shuffle(std::span<int>(v));
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) {
        CHECK(sorted[static_cast<std::size_t>(i)] == i);
    }
}

TEST_CASE("tridiagonal QL eigenvalues agree with Eigen and with Jacobi") {
    Rng rng(23);
    for (std::size_t n : {1u, 2u, 3u, 7u, 32u, 128u}) {
        // Positive semidefinite, like a covariance: B B^T with rank n/2 + 1.
        const std::size_t r = n / 2 + 1;
        Matrix b(n, r);
        for (double& v : b.values()) {
            v = rng.normal();
        }
        const Matrix m = matmul(b, b.transposed());
        const Matrix sym_noise = random_symmetric(rng, n);
        for (const Matrix& input : {m, sym_noise}) {
            Eigen::MatrixXd em(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    em(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = input(i, j);
                }
            }
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(em, Eigen::EigenvaluesOnly);
            const double scale = std::max(1.0, oracle.eigenvalues().cwiseAbs().maxCoeff());
            const auto vals = sym_eigvals(input);
            const auto jac = jacobi_eigen(input).values;
            REQUIRE(vals.size() == n);
            for (std::size_t k = 0; k < n; ++k) {
                const double expected = std::max(0.0, oracle.eigenvalues()(static_cast<Eigen::Index>(n - 1 - k)));
                CHECK(std::abs(vals[k] - expected) < 1e-12 * scale);
                CHECK(std::abs(vals[k] - std::max(0.0, jac[k])) < 1e-12 * scale);
            }
        }
    }
    CHECK(sym_eigvals(Matrix(0, 0)).empty());
    CHECK_THROWS_AS(sym_eigvals(Matrix::from_rows({{1, 2}, {0, 1}})), std::invalid_argument);
}

TEST_CASE("jacobi eigenvalues agree with Eigen's self-adjoint solver") {
    Rng rng(17);
    for (std::size_t n : {1u, 2u, 5u, 16u, 40u}) {
        const Matrix m = random_symmetric(rng, n);
        const EigenDecomposition dec = jacobi_eigen(m, true);
        Eigen::MatrixXd em(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                em(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(em);
        for (std::size_t k = 0; k < n; ++k) {
            // Eigen sorts ascending.
            const double expected = oracle.eigenvalues()(static_cast<Eigen::Index>(n - 1 - k));
            CHECK(dec.values[k] == doctest::Approx(expected).epsilon(1e-10));
        }
        // m v = lambda v for every pair.
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t i = 0; i < n; ++i) {
                double mv = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    mv += m(i, j) * dec.vectors(j, k);
                }
                CHECK(std::abs(mv - dec.values[k] * dec.vectors(i, k)) < 1e-10);
            }
        }
        CHECK(std::is_sorted(dec.values.rbegin(), dec.values.rend()));
    }
}

TEST_CASE("jacobi handles diagonal, degenerate and tiny inputs") {
    const std::vector<double> diag{3, 1, 2};
    const auto vals = sym_eigvals(Matrix::diagonal(diag));
    CHECK(vals == std::vector<double>{3, 2, 1});
    CHECK(jacobi_eigen(Matrix::identity(6)).sweeps == 0);
    const auto zeros = sym_eigvals(Matrix(4, 4));
    CHECK(std::all_of(zeros.begin(), zeros.end(), [](double v) { return v == 0.0; }));
    // Negative eigenvalues are clamped by sym_eigvals only.
    const Matrix neg = Matrix::from_rows({{0, 1}, {1, 0}});
    CHECK(jacobi_eigen(neg).values.back() == doctest::Approx(-1.0));
    CHECK(sym_eigvals(neg).back() == 0.0);
}

TEST_CASE("jacobi rejects bad input") {
    CHECK_THROWS_AS(jacobi_eigen(Matrix(2, 3)), std::invalid_argument);
    CHECK_THROWS_AS(jacobi_eigen(Matrix::from_rows({{1, 2}, {0, 1}})), std::invalid_argument);
    Matrix bad = Matrix::identity(2);
    bad(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(jacobi_eigen(bad), NumericError);
}
