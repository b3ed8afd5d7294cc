#pragma once

#include "grokscope/core/matrix.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace grokscope {

struct SpectralSummary {
    std::vector<double> eigenvalues; // descending, clamped to >= 0
    double entropy = 0.0;            // raw, natural log
    double normalized_entropy = 0.0; // entropy / log d
    double effective_rank = 1.0;     // exp(entropy)
    bool degenerate = false;         // every eigenvalue was zero
};

// (1/N) sum_i (z_i - zbar)(z_i - zbar)^T, symmetrised. Requires N > d.
Matrix covariance(const Matrix& z);

// Entropy of the normalised eigenvalue distribution. Eigenvalues below
// 1e-15 * lambda_max are treated as zero; zero terms contribute nothing.
SpectralSummary spectral_entropy(const Matrix& cov);

// covariance() followed by spectral_entropy().
SpectralSummary monitor_representation(const Matrix& z);

// Tracks train-probe vs test-probe entropy across steps.
class ProbeComparison {
public:
    // Returns |h_train - h_test| for this step.
    double add(double h_train, double h_test);

    std::size_t size() const noexcept { return train_.size(); }
    double last_difference() const;
    double mean_difference() const;
    double max_difference() const;
    // Pearson r between the two series; empty with fewer than 2 points.
    std::optional<double> correlation() const;

private:
    std::vector<double> train_;
    std::vector<double> test_;
};

// Largest |Pearson r| between any embedding column and cos/sin(2 pi f a / p),
// f = 1..floor(p/2), over rows a = 0..p-1. Uses the first p rows.
double fourier_alignment(const Matrix& embedding, int p);

// Pearson correlation; 0 when either side has zero variance.
double pearson_r(std::span<const double> x, std::span<const double> y);

} // namespace grokscope
