#include "doctest.h"

#include "grokscope/mathcheck.hpp"

#include <cmath>

using namespace grokscope;
using namespace grokscope::mathcheck;

TEST_CASE("entropy sensitivity is first order") {
    const CheckResult r = check_entropy_sensitivity();
    INFO(r.detail);
    CHECK(r.passed);
    CHECK(r.measured.at("slope") >= 0.9);
    CHECK(r.measured.at("slope") <= 1.1);
}

TEST_CASE("mixing drop is second order") {
    const CheckResult r = check_mixing_lemma();
    INFO(r.detail);
    CHECK(r.passed);
    CHECK(r.measured.at("slope") >= 1.7);
    CHECK(r.measured.at("slope") <= 2.3);
}

TEST_CASE("shift-averaged mixing drop on a centred batch") {
    const std::size_t b = 16;
    Matrix z(b, 4);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t c = 0; c < 4; ++c) {
            z(i, c) = std::sin(1.3 * static_cast<double>(i * 4 + c) + 0.2 * static_cast<double>(c * c));
        }
    }
    for (std::size_t c = 0; c < 4; ++c) {
        double m = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            m += z(i, c);
        }
        for (std::size_t i = 0; i < b; ++i) {
            z(i, c) -= m / static_cast<double>(b);
        }
    }
    auto averaged = [&](double alpha) {
        double total = 0.0;
        for (std::size_t s = 1; s < b; ++s) {
            total += mixing_entropy_drop(z, alpha, s);
        }
        return total / static_cast<double>(b - 1);
    };
    CHECK(mixing_entropy_drop(z, 0.0, 1) == doctest::Approx(0.0).scale(1.0));
    const double small = averaged(0.01);
    const double twice = averaged(0.02);
    CHECK(small > 0.0);
    CHECK(twice / small == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("effective rank") {
    const CheckResult r = check_effective_rank();
    INFO(r.detail);
    CHECK(r.passed);
}

TEST_CASE("hitting time of the linear ODE") {
    // log(0.2 / 0.002) / 0.01 = 100 log 10.
    CHECK(ode_hitting_time(0.01, 0.2, 0.002) == doctest::Approx(460.517).epsilon(1e-5));
    CHECK(ode_hitting_time(0.02, 0.2, 0.002) == doctest::Approx(ode_hitting_time(0.01, 0.2, 0.002) / 2).epsilon(1e-9));
    CHECK(ode_hitting_time(0.01, 0.2, 0.2) == doctest::Approx(0.0).scale(1.0));
    CHECK_THROWS(ode_hitting_time(0.0, 0.2, 0.002));
}

TEST_CASE("predictive scaling") {
    const CheckResult r = check_predictive_scaling();
    INFO(r.detail);
    CHECK(r.passed);
    CHECK(r.measured.at("min_r2") > 0.95);
}

TEST_CASE("run_all is deterministic") {
    const Report a = run_all(0);
    const Report b = run_all(0);
    CHECK(a.all_passed());
    CHECK(to_json(a) == to_json(b));
    CHECK(to_text(a).find("FAIL") == std::string::npos);
}
