#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace grokscope::stats {

enum class BootstrapMethod {
    percentile,
    // Percentile bootstrap with the quantile level widened so that its coverage
    // for the mean matches the t-interval at small n.
    expanded_percentile,
};

std::string to_string(BootstrapMethod method);
BootstrapMethod parse_bootstrap_method(std::string_view text);

struct BootstrapOptions {
    int resamples = 10'000;
    double level = 0.95;
    std::uint64_t seed = 0;
    BootstrapMethod method = BootstrapMethod::expanded_percentile;
};

struct BootstrapCI {
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    int resamples = 0;
};

using Statistic = std::function<double(std::span<const double>)>;

double mean(std::span<const double> x);
// Sample variance with n - 1 in the denominator.
double variance(std::span<const double> x);

// Needs at least 2 samples. The resampling stream is (seed, "bootstrap").
BootstrapCI bootstrap_ci(std::span<const double> samples, const BootstrapOptions& options = {});
BootstrapCI bootstrap_ci(std::span<const double> samples, const Statistic& statistic,
                         const BootstrapOptions& options = {});

// Quantile with linear interpolation between order statistics of sorted data.
double quantile_sorted(std::span<const double> sorted, double q);

enum class Alternative { greater, less, two_sided };

struct MannWhitneyResult {
    double u = 0.0; // pairs with a > b, ties counted 1/2
    double p = 1.0;
    bool exact = false;
};

// Exact null distribution when min(|a|, |b|) <= 12 and there are no ties;
// otherwise the normal approximation with tie and continuity corrections.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                 Alternative alternative = Alternative::greater);

// P(U >= u) under the null for sample sizes m and n, no ties.
double mann_whitney_exact_upper(std::size_t m, std::size_t n, double u);
double mann_whitney_normal_p(std::span<const double> a, std::span<const double> b, Alternative alternative);

// (mean a - mean b) / pooled SD. Throws on fewer than 2 values per side or zero pooled SD.
double cohens_d(std::span<const double> a, std::span<const double> b);

struct PearsonResult {
    double r = 0.0;
    double p = 1.0; // two-sided, t distribution with n - 2 dof
    bool degenerate = false; // zero variance on a side; r reported as 0
    std::size_t n = 0;
};

// Needs at least 3 pairs.
PearsonResult pearson(std::span<const double> x, std::span<const double> y);

// 1 - SSE/SST against the mean of y; 0 when SST is 0.
double r_squared(std::span<const double> y, std::span<const double> fitted);

double normal_cdf(double z);

} // namespace grokscope::stats
