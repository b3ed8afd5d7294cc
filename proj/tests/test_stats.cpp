#include "doctest.h"

#include "grokscope/stats.hpp"

#include <cmath>
#include <vector>

using namespace grokscope;
using namespace grokscope::stats;

namespace {

// P(U >= u) by enumerating every rank assignment of the first sample.
double brute_upper(int m, int n, double u) {
    const int total = m + n;
    long long hits = 0;
    long long count = 0;
    for (unsigned mask = 0; mask < (1u << total); ++mask) {
        if (__builtin_popcount(mask) != m) {
            continue;
        }
        // U = pairs (a in first, b in second) with rank a > rank b.
        double stat = 0.0;
        for (int i = 0; i < total; ++i) {
            if (mask & (1u << i)) {
                for (int j = 0; j < i; ++j) {
                    if (!(mask & (1u << j))) {
                        stat += 1.0;
                    }
                }
            }
        }
        ++count;
        hits += stat >= u - 1e-9 ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(count);
}

} // namespace

TEST_CASE("exact Mann-Whitney distribution against enumeration") {
    for (int m = 1; m <= 6; ++m) {
        for (int n = 1; n <= 6; ++n) {
            for (int u = 0; u <= m * n; ++u) {
                CHECK(mann_whitney_exact_upper(static_cast<std::size_t>(m), static_cast<std::size_t>(n), u) ==
                      doctest::Approx(brute_upper(m, n, u)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("Mann-Whitney examples") {
    const std::vector<double> a{4, 5, 6};
    const std::vector<double> b{1, 2, 3};
    const auto r = mann_whitney_u(a, b);
    CHECK(r.exact);
    CHECK(r.u == 9.0);
    CHECK(r.p == doctest::Approx(0.05));
    CHECK(mann_whitney_u(a, b, Alternative::less).p == doctest::Approx(1.0));
    CHECK(mann_whitney_u(a, b, Alternative::two_sided).p == doctest::Approx(0.1));
    const auto same = mann_whitney_u(a, a);
    CHECK(same.p >= 0.5);
    CHECK_FALSE(same.exact);
    CHECK(same.u == 4.5);
}

TEST_CASE("normal approximation tracks the exact test at n = 10") {
    std::vector<double> a;
    std::vector<double> b;
    for (int i = 0; i < 10; ++i) {
        a.push_back(i * 1.7 + 3.1);
        b.push_back(i * 1.3 + 0.2);
    }
    const auto exact = mann_whitney_u(a, b);
    CHECK(exact.exact);
    CHECK(std::abs(exact.p - mann_whitney_normal_p(a, b, Alternative::greater)) < 0.02);
    // Large samples use the approximation.
    std::vector<double> big_a(20);
    std::vector<double> big_b(20);
    for (int i = 0; i < 20; ++i) {
        big_a[static_cast<std::size_t>(i)] = i + 0.5;
        big_b[static_cast<std::size_t>(i)] = i;
    }
    CHECK_FALSE(mann_whitney_u(big_a, big_b).exact);
    CHECK_THROWS(mann_whitney_u(std::vector<double>{}, b));
}

TEST_CASE("Cohen's d") {
    const std::vector<double> a{2, 4};
    const std::vector<double> b{0, 2};
    CHECK(cohens_d(a, b) == doctest::Approx(std::sqrt(2.0)));
    CHECK(cohens_d(b, a) == doctest::Approx(-std::sqrt(2.0)));
    CHECK_THROWS(cohens_d(std::vector<double>{1, 1}, std::vector<double>{2, 2}));
    CHECK_THROWS(cohens_d(std::vector<double>{1}, b));
}

TEST_CASE("Pearson") {
    const std::vector<double> x{1, 2, 3, 4};
    const std::vector<double> up{3, 5, 7, 9};
    const std::vector<double> down{9, 7, 5, 3};
    CHECK(pearson(x, up).r == doctest::Approx(1.0));
    CHECK(pearson(x, down).r == doctest::Approx(-1.0));
    const std::vector<double> y{1, 3, 2, 5};
    // Oracle: long double sums.
    long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    const long double r = (4 * sxy - sx * sy) / std::sqrt((4 * sxx - sx * sx) * (4 * syy - sy * sy));
    const auto res = pearson(x, y);
    CHECK(res.r == doctest::Approx(static_cast<double>(r)).epsilon(1e-14));
    CHECK(res.p > 0.0);
    CHECK(res.p < 1.0);
    const auto flat = pearson(x, std::vector<double>{1, 1, 1, 1});
    CHECK(flat.degenerate);
    CHECK(flat.r == 0.0);
    CHECK_THROWS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}));
}

TEST_CASE("bootstrap") {
    const std::vector<double> same{3, 3, 3, 3, 3};
    const auto flat = bootstrap_ci(same);
    CHECK(flat.lower == 3.0);
    CHECK(flat.upper == 3.0);
    const std::vector<double> binary{0, 1, 0, 1, 1, 0, 1, 0};
    for (BootstrapMethod method : {BootstrapMethod::percentile, BootstrapMethod::expanded_percentile}) {
        BootstrapOptions o;
        o.method = method;
        o.resamples = 2000;
        const auto ci = bootstrap_ci(binary, o);
        CHECK(ci.lower >= 0.0);
        CHECK(ci.upper <= 1.0);
        CHECK(ci.lower < 0.5);
        CHECK(ci.upper > 0.5);
        CHECK(ci.estimate == 0.5);
        const auto again = bootstrap_ci(binary, o);
        CHECK(again.lower == ci.lower);
        CHECK(again.upper == ci.upper);
    }
    BootstrapOptions plain;
    plain.method = BootstrapMethod::percentile;
    const auto narrow = bootstrap_ci(binary, plain);
    const auto wide = bootstrap_ci(binary);
    CHECK(wide.upper - wide.lower >= narrow.upper - narrow.lower);
    CHECK_THROWS(bootstrap_ci(std::vector<double>{1.0}));
    CHECK(parse_bootstrap_method("percentile") == BootstrapMethod::percentile);
}

TEST_CASE("quantiles, moments and R^2") {
    const std::vector<double> s{1, 2, 3, 4};
    CHECK(quantile_sorted(s, 0.0) == 1.0);
    CHECK(quantile_sorted(s, 1.0) == 4.0);
    CHECK(quantile_sorted(s, 0.5) == 2.5);
    CHECK(mean(s) == 2.5);
    CHECK(variance(s) == doctest::Approx(5.0 / 3.0));
    CHECK(r_squared(s, s) == 1.0);
    const std::vector<double> m{2.5, 2.5, 2.5, 2.5};
    CHECK(r_squared(s, m) == doctest::Approx(0.0));
    CHECK(r_squared(m, s) == 0.0);
    CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
    CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975));
}
