#include "grokscope/stats.hpp"

#include "grokscope/core/rng.hpp"
#include "grokscope/monitor.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace grokscope::stats {

std::string to_string(BootstrapMethod method) {
    return method == BootstrapMethod::percentile ? "percentile" : "expanded-percentile";
}

BootstrapMethod parse_bootstrap_method(std::string_view text) {
    if (text == "percentile") {
        return BootstrapMethod::percentile;
    }
    if (text == "expanded-percentile") {
        return BootstrapMethod::expanded_percentile;
    }
    throw std::invalid_argument("unknown bootstrap method '" + std::string(text) + "'");
}

double mean(std::span<const double> x) {
    if (x.empty()) {
        throw std::invalid_argument("mean of an empty sample");
    }
    double s = 0.0;
    for (double v : x) {
        s += v;
    }
    return s / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
    if (x.size() < 2) {
        throw std::invalid_argument("variance needs at least 2 values");
    }
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) {
        s += (v - m) * (v - m);
    }
    return s / static_cast<double>(x.size() - 1);
}

double normal_cdf(double z) {
    return boost::math::cdf(boost::math::normal_distribution<double>(), z);
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) {
        throw std::invalid_argument("quantile of an empty sample");
    }
    q = std::clamp(q, 0.0, 1.0);
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

BootstrapCI bootstrap_ci(std::span<const double> samples, const BootstrapOptions& options) {
    return bootstrap_ci(samples, [](std::span<const double> x) { return mean(x); }, options);
}

BootstrapCI bootstrap_ci(std::span<const double> samples, const Statistic& statistic,
                         const BootstrapOptions& options) {
    const std::size_t n = samples.size();
    if (n < 2) {
        throw std::invalid_argument("bootstrap_ci needs at least 2 samples, got " + std::to_string(n));
    }
    if (options.resamples < 1 || !(options.level > 0.0 && options.level < 1.0)) {
        throw std::invalid_argument("bootstrap_ci: resamples must be positive and level in (0, 1)");
    }
    BootstrapCI ci;
    ci.estimate = statistic(samples);
    ci.resamples = options.resamples;

    Rng rng = Rng::stream(options.seed, "bootstrap");
    std::vector<double> resample(n);
    std::vector<double> stats(static_cast<std::size_t>(options.resamples));
    for (double& s : stats) {
        for (double& v : resample) {
            v = samples[rng.below(n)];
        }
        s = statistic(resample);
    }
    std::sort(stats.begin(), stats.end());

    double alpha = 1.0 - options.level;
    if (options.method == BootstrapMethod::expanded_percentile) {
        const double dof = static_cast<double>(n - 1);
        const double t = boost::math::quantile(boost::math::students_t_distribution<double>(dof),
                                               1.0 - alpha / 2.0);
        alpha = 2.0 * normal_cdf(-std::sqrt(static_cast<double>(n) / dof) * t);
    }
    ci.lower = quantile_sorted(stats, alpha / 2.0);
    ci.upper = quantile_sorted(stats, 1.0 - alpha / 2.0);
    return ci;
}

namespace {

constexpr std::size_t kExactLimit = 12;

bool has_ties(std::span<const double> a, std::span<const double> b) {
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    return std::adjacent_find(all.begin(), all.end()) != all.end();
}

double u_statistic(std::span<const double> a, std::span<const double> b) {
    double u = 0.0;
    for (double x : a) {
        for (double y : b) {
            if (x > y) {
                u += 1.0;
            } else if (x == y) {
                u += 0.5;
            }
        }
    }
    return u;
}

// Coefficients of the Gaussian binomial [m+n choose m]_q; entry k counts the
// rank arrangements with U = k.
std::vector<long double> u_counts(std::size_t m, std::size_t n) {
    const std::size_t k = std::min(m, n);
    const std::size_t other = std::max(m, n);
    std::vector<long double> poly(m * n + 1, 0.0L);
    poly[0] = 1.0L;
    std::size_t degree = 0;
    for (std::size_t i = 1; i <= k; ++i) {
        // Multiply by (1 - q^(other + i)), then divide exactly by (1 - q^i).
        // Only coefficients up to the quotient's degree are needed.
        const std::size_t up = other + i;
        degree += other;
        for (std::size_t d = degree; d >= up; --d) {
            poly[d] -= poly[d - up];
        }
        for (std::size_t d = i; d <= degree; ++d) {
            poly[d] += poly[d - i];
        }
    }
    return poly;
}

} // namespace

double mann_whitney_exact_upper(std::size_t m, std::size_t n, double u) {
    if (m == 0 || n == 0) {
        throw std::invalid_argument("mann_whitney_exact_upper: empty sample");
    }
    const std::vector<long double> counts = u_counts(m, n);
    long double total = 0.0L;
    long double tail = 0.0L;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        total += counts[k];
        if (static_cast<double>(k) >= u - 1e-9) {
            tail += counts[k];
        }
    }
    return static_cast<double>(tail / total);
}

double mann_whitney_normal_p(std::span<const double> a, std::span<const double> b, Alternative alternative) {
    const auto m = static_cast<double>(a.size());
    const auto n = static_cast<double>(b.size());
    const double total = m + n;
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j] == all[i]) {
            ++j;
        }
        const auto t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    const double var = m * n / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    const double u = u_statistic(a, b);
    const double mu = m * n / 2.0;
    if (var <= 0.0) {
        return 1.0;
    }
    const double sd = std::sqrt(var);
    switch (alternative) {
    case Alternative::greater: return 1.0 - normal_cdf((u - mu - 0.5) / sd);
    case Alternative::less: return normal_cdf((u - mu + 0.5) / sd);
    case Alternative::two_sided: {
        const double z = std::max(0.0, std::abs(u - mu) - 0.5) / sd;
        return std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
    }
    }
    return 1.0;
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b, Alternative alternative) {
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("mann_whitney_u needs two nonempty samples");
    }
    MannWhitneyResult r;
    r.u = u_statistic(a, b);
    if (std::min(a.size(), b.size()) <= kExactLimit && !has_ties(a, b)) {
        r.exact = true;
        const std::size_t m = a.size();
        const std::size_t n = b.size();
        const double mn = static_cast<double>(m * n);
        switch (alternative) {
        case Alternative::greater: r.p = mann_whitney_exact_upper(m, n, r.u); break;
        // By symmetry P(U <= u) = P(U >= mn - u).
        case Alternative::less: r.p = mann_whitney_exact_upper(m, n, mn - r.u); break;
        case Alternative::two_sided: {
            const double hi = mann_whitney_exact_upper(m, n, std::max(r.u, mn - r.u));
            r.p = std::min(1.0, 2.0 * hi);
            break;
        }
        }
        return r;
    }
    r.p = mann_whitney_normal_p(a, b, alternative);
    return r;
}

double cohens_d(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) {
        throw std::invalid_argument("cohens_d needs at least 2 values per group");
    }
    const auto na = static_cast<double>(a.size());
    const auto nb = static_cast<double>(b.size());
    const double pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
    if (pooled <= 0.0) {
        throw std::domain_error("cohens_d: pooled standard deviation is zero");
    }
    return (mean(a) - mean(b)) / std::sqrt(pooled);
}

PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("pearson: length mismatch");
    }
    if (x.size() < 3) {
        throw std::invalid_argument("pearson needs at least 3 pairs");
    }
    PearsonResult out;
    out.n = x.size();
    const double mx = mean(x);
    const double my = mean(y);
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        out.degenerate = true;
        return out;
    }
    out.r = pearson_r(x, y);
    const double dof = static_cast<double>(out.n - 2);
    const double denom = 1.0 - out.r * out.r;
    if (denom <= 0.0) {
        out.p = 0.0;
        return out;
    }
    const double t = std::abs(out.r) * std::sqrt(dof / denom);
    out.p = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(dof), t));
    return out;
}

double r_squared(std::span<const double> y, std::span<const double> fitted) {
    if (y.size() != fitted.size() || y.empty()) {
        throw std::invalid_argument("r_squared: length mismatch or empty input");
    }
    const double m = mean(y);
    double sse = 0.0;
    double sst = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sse += (y[i] - fitted[i]) * (y[i] - fitted[i]);
        sst += (y[i] - m) * (y[i] - m);
    }
    if (sst <= 0.0) {
        return 0.0;
    }
    return 1.0 - sse / sst;
}

} // namespace grokscope::stats
