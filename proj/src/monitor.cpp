#include "grokscope/monitor.hpp"

#include "grokscope/core/symmetric_eigen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace grokscope {

namespace {

constexpr double kRelativeFloor = 1e-15;

} // namespace

Matrix covariance(const Matrix& z) {
    const std::size_t n = z.rows();
    const std::size_t d = z.cols();
    if (n <= d) {
        throw std::invalid_argument("covariance needs more rows than columns, got " + z.shape_string());
    }
    if (!z.all_finite()) {
        throw NumericError("covariance: non-finite representation");
    }
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] += z(i, j);
        }
    }
    for (double& m : mean) {
        m /= static_cast<double>(n);
    }
    Matrix centered(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            centered(i, j) = z(i, j) - mean[j];
        }
    }
    Matrix cov;
    gemm(centered, true, centered, false, cov);
    cov *= 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            const double s = 0.5 * (cov(i, j) + cov(j, i));
            cov(i, j) = s;
            cov(j, i) = s;
        }
    }
    return cov;
}

SpectralSummary spectral_entropy(const Matrix& cov) {
    SpectralSummary out;
    out.eigenvalues = sym_eigvals(cov);
    const std::size_t d = out.eigenvalues.size();
    if (d == 0) {
        throw std::invalid_argument("spectral_entropy: empty covariance");
    }
    const double top = out.eigenvalues.front();
    double total = 0.0;
    for (double& l : out.eigenvalues) {
        if (l < kRelativeFloor * top) {
            l = 0.0;
        }
        total += l;
    }
    if (total <= 0.0) {
        out.degenerate = true;
        return out;
    }
    double h = 0.0;
    for (double l : out.eigenvalues) {
        if (l > 0.0) {
            const double p = l / total;
            h -= p * std::log(p);
        }
    }
    out.entropy = std::max(h, 0.0);
    out.normalized_entropy = d > 1 ? out.entropy / std::log(static_cast<double>(d)) : 0.0;
    out.effective_rank = std::exp(out.entropy);
    return out;
}

SpectralSummary monitor_representation(const Matrix& z) {
    return spectral_entropy(covariance(z));
}

double ProbeComparison::add(double h_train, double h_test) {
    train_.push_back(h_train);
    test_.push_back(h_test);
    return std::abs(h_train - h_test);
}

double ProbeComparison::last_difference() const {
    if (train_.empty()) {
        throw std::logic_error("ProbeComparison: no points recorded");
    }
    return std::abs(train_.back() - test_.back());
}

double ProbeComparison::mean_difference() const {
    if (train_.empty()) {
        throw std::logic_error("ProbeComparison: no points recorded");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < train_.size(); ++i) {
        s += std::abs(train_[i] - test_[i]);
    }
    return s / static_cast<double>(train_.size());
}

double ProbeComparison::max_difference() const {
    double m = 0.0;
    for (std::size_t i = 0; i < train_.size(); ++i) {
        m = std::max(m, std::abs(train_[i] - test_[i]));
    }
    return m;
}

std::optional<double> ProbeComparison::correlation() const {
    if (train_.size() < 2) {
        return std::nullopt;
    }
    return pearson_r(train_, test_);
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("pearson_r: length mismatch");
    }
    const std::size_t n = x.size();
    if (n == 0) {
        return 0.0;
    }
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        return 0.0;
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double fourier_alignment(const Matrix& embedding, int p) {
    if (p < 3) {
        throw std::invalid_argument("fourier_alignment needs a modulus >= 3, got " + std::to_string(p));
    }
    const auto rows = static_cast<std::size_t>(p);
    if (embedding.rows() < rows) {
        throw std::invalid_argument("fourier_alignment: embedding has " + std::to_string(embedding.rows()) +
                                    " rows, modulus is " + std::to_string(p));
    }
    std::vector<std::vector<double>> columns(embedding.cols(), std::vector<double>(rows));
    for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t j = 0; j < embedding.cols(); ++j) {
            columns[j][a] = embedding(a, j);
        }
    }
    double best = 0.0;
    std::vector<double> wave_cos(rows);
    std::vector<double> wave_sin(rows);
    for (int f = 1; f <= p / 2; ++f) {
        for (std::size_t a = 0; a < rows; ++a) {
            const double angle = 2.0 * std::numbers::pi * f * static_cast<double>(a) / p;
            wave_cos[a] = std::cos(angle);
            wave_sin[a] = std::sin(angle);
        }
        for (const auto& col : columns) {
            best = std::max(best, std::abs(pearson_r(col, wave_cos)));
            best = std::max(best, std::abs(pearson_r(col, wave_sin)));
        }
    }
    return best;
}

} // namespace grokscope
