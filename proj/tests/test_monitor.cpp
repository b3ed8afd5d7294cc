#include "doctest.h"

#include "grokscope/core/rng.hpp"
#include "grokscope/monitor.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

using namespace grokscope;

namespace {

// Two-pass covariance in long double.
Matrix naive_covariance(const Matrix& z) {
    const std::size_t n = z.rows();
    const std::size_t d = z.cols();
    std::vector<long double> mean(d, 0.0L);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] += z(i, j);
        }
    }
    for (auto& m : mean) {
        m /= static_cast<long double>(n);
    }
    Matrix c(d, d);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
            long double s = 0.0L;
            for (std::size_t i = 0; i < n; ++i) {
                s += (z(i, a) - mean[a]) * (z(i, b) - mean[b]);
            }
            c(a, b) = static_cast<double>(s / static_cast<long double>(n));
        }
    }
    return c;
}

double entropy_of(std::vector<double> eig) {
    double total = 0.0;
    for (double e : eig) {
        total += e;
    }
    double h = 0.0;
    for (double e : eig) {
        if (e > 0.0) {
            h -= e / total * std::log(e / total);
        }
    }
    return h;
}

} // namespace

TEST_CASE("covariance against two-pass oracle") {
    Rng rng(3);
    const Matrix z = testing::random_matrix(rng, 40, 6, 2.0);
    const Matrix c = covariance(z);
    const Matrix ref = naive_covariance(z);
    for (std::size_t a = 0; a < 6; ++a) {
        for (std::size_t b = 0; b < 6; ++b) {
            CHECK(c(a, b) == doctest::Approx(ref(a, b)).epsilon(1e-12));
        }
    }
    CHECK(asymmetry(c) == 0.0);
    const Matrix tiny = Matrix::from_rows({{1, 0}, {-1, 0}, {0, 2}});
    const Matrix ct = covariance(tiny);
    CHECK(ct(0, 0) == doctest::Approx(2.0 / 3.0));
    CHECK(ct(1, 1) == doctest::Approx(8.0 / 9.0));
    CHECK_THROWS_AS(covariance(Matrix(4, 4)), std::invalid_argument);
}

TEST_CASE("entropy closed forms") {
    for (std::size_t d : {4u, 64u, 128u}) {
        const SpectralSummary s = spectral_entropy(Matrix::identity(d));
        CHECK(s.normalized_entropy == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(s.effective_rank == doctest::Approx(static_cast<double>(d)).epsilon(1e-10));
    }
    Matrix rank1(5, 5);
    rank1(2, 2) = 3.0;
    const SpectralSummary r1 = spectral_entropy(rank1);
    CHECK(r1.normalized_entropy == 0.0);
    CHECK(r1.effective_rank == 1.0);
    const std::vector<double> half{1, 1, 0, 0};
    const SpectralSummary s = spectral_entropy(Matrix::diagonal(half));
    CHECK(std::abs(s.normalized_entropy - 0.5) < 1e-12);
    CHECK(s.effective_rank == doctest::Approx(2.0));
    const SpectralSummary zero = spectral_entropy(Matrix(3, 3));
    CHECK(zero.degenerate);
    CHECK(zero.normalized_entropy == 0.0);
    CHECK_THROWS(spectral_entropy(Matrix(2, 3)));
}

TEST_CASE("entropy against Eigen spectrum") {
    Rng rng(11);
    const Matrix z = testing::random_matrix(rng, 200, 12, 1.0);
    const Matrix c = covariance(z);
    Eigen::MatrixXd e(12, 12);
    for (std::size_t a = 0; a < 12; ++a) {
        for (std::size_t b = 0; b < 12; ++b) {
            e(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = c(a, b);
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(e);
    std::vector<double> eig(solver.eigenvalues().data(), solver.eigenvalues().data() + 12);
    const double h = entropy_of(eig);
    const SpectralSummary s = spectral_entropy(c);
    CHECK(s.entropy == doctest::Approx(h).epsilon(1e-10));
    CHECK(s.normalized_entropy == doctest::Approx(h / std::log(12.0)).epsilon(1e-10));
}

TEST_CASE("entropy is invariant to rotation and scale") {
    Rng rng(5);
    const Matrix z = testing::random_matrix(rng, 100, 8, 1.0);
    // Random orthogonal matrix from Eigen's QR.
    Eigen::MatrixXd g(8, 8);
    for (Eigen::Index i = 0; i < 64; ++i) {
        g.data()[i] = rng.normal();
    }
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    Matrix rot(8, 8);
    for (std::size_t a = 0; a < 8; ++a) {
        for (std::size_t b = 0; b < 8; ++b) {
            rot(a, b) = q(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        }
    }
    const double h = monitor_representation(z).normalized_entropy;
    CHECK(monitor_representation(matmul(z, rot)).normalized_entropy == doctest::Approx(h).epsilon(1e-10));
    CHECK(monitor_representation(z * 37.0).normalized_entropy == doctest::Approx(h).epsilon(1e-10));
    Matrix shifted = z;
    for (std::size_t i = 0; i < shifted.rows(); ++i) {
        shifted(i, 3) += 5.0;
    }
    CHECK(monitor_representation(shifted).normalized_entropy == doctest::Approx(h).epsilon(1e-10));
}

TEST_CASE("monitor cost on a 512x128 batch") {
    Rng rng(1);
    const Matrix z = testing::random_matrix(rng, 512, 128, 1.0);
    const auto start = std::chrono::steady_clock::now();
    const SpectralSummary s = monitor_representation(z);
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    CHECK(s.normalized_entropy > 0.9);
    MESSAGE("monitor 512x128: " << ms << " ms");
    CHECK(ms < 100.0);
}

TEST_CASE("fourier alignment") {
    const int p = 13;
    Matrix e(p + 1, 4);
    Rng rng(2);
    for (int a = 0; a <= p; ++a) {
        e(static_cast<std::size_t>(a), 0) = 1.0;
        e(static_cast<std::size_t>(a), 1) = 1e-3 * rng.normal();
    }
    CHECK(fourier_alignment(e, p) < 0.99);
    for (int a = 0; a < p; ++a) {
        e(static_cast<std::size_t>(a), 2) = 3.0 * std::cos(2 * std::numbers::pi * 4 * a / p) + 1.0;
    }
    CHECK(fourier_alignment(e, p) == doctest::Approx(1.0).epsilon(1e-12));
    Matrix constant(p, 2, 1.0);
    CHECK(fourier_alignment(constant, p) == 0.0);
    CHECK_THROWS(fourier_alignment(Matrix(5, 2), p));
}

TEST_CASE("probe comparison") {
    ProbeComparison pc;
    CHECK_FALSE(pc.correlation().has_value());
    CHECK(pc.add(0.7, 0.71) == doctest::Approx(0.01));
    pc.add(0.6, 0.61);
    pc.add(0.5, 0.53);
    CHECK(pc.size() == 3);
    CHECK(pc.last_difference() == doctest::Approx(0.03));
    CHECK(pc.max_difference() == doctest::Approx(0.03));
    CHECK(pc.mean_difference() == doctest::Approx(0.05 / 3));
    REQUIRE(pc.correlation().has_value());
    CHECK(*pc.correlation() > 0.99);
}

TEST_CASE("pearson_r") {
    const std::vector<double> x{1, 2, 3, 4};
    const std::vector<double> y{2, 4, 6, 8.5};
    const std::vector<double> c{1, 1, 1, 1};
    CHECK(pearson_r(x, x) == doctest::Approx(1.0));
    CHECK(pearson_r(x, c) == 0.0);
    CHECK(pearson_r(x, y) > 0.99);
}
