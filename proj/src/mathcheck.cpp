#include "grokscope/mathcheck.hpp"

#include "grokscope/core/rng.hpp"
#include "grokscope/intervention.hpp"
#include "grokscope/monitor.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace grokscope::mathcheck {

namespace {

std::size_t to_size(int v) { return static_cast<std::size_t>(v); }

Matrix random_orthogonal(Rng& rng, std::size_t d) {
    Matrix q(d, d);
    for (double& v : q.values()) {
        v = rng.normal();
    }
    // Modified Gram-Schmidt over columns.
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                dot += q(i, j) * q(i, k);
            }
            for (std::size_t i = 0; i < d; ++i) {
                q(i, j) -= dot * q(i, k);
            }
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            norm += q(i, j) * q(i, j);
        }
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < d; ++i) {
            q(i, j) /= norm;
        }
    }
    return q;
}

Matrix with_spectrum(const Matrix& q, std::span<const double> spectrum) {
    Matrix scaled = q;
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t j = 0; j < q.cols(); ++j) {
            scaled(i, j) *= spectrum[j];
        }
    }
    Matrix out;
    gemm(scaled, false, q, true, out);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = i + 1; j < out.cols(); ++j) {
            const double s = 0.5 * (out(i, j) + out(j, i));
            out(i, j) = s;
            out(j, i) = s;
        }
    }
    return out;
}

Matrix random_symmetric_unit(Rng& rng, std::size_t d) {
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            const double v = rng.normal();
            m(i, j) = v;
            m(j, i) = v;
        }
    }
    m *= 1.0 / m.frobenius_norm();
    return m;
}

double log_log_slope(std::span<const double> x, std::span<const double> y) {
    double mx = 0.0;
    double my = 0.0;
    const auto n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

} // namespace

CheckResult check_entropy_sensitivity(const SensitivityOptions& o) {
    CheckResult r;
    r.name = "entropy-sensitivity";
    const std::size_t d = to_size(o.d);
    Rng rng = Rng::stream(o.seed, "mathcheck-sensitivity");
    std::vector<double> mean_log_dh(o.scales.size(), 0.0);
    double max_ratio = 0.0;
    double min_ratio = std::numeric_limits<double>::infinity();
    for (int t = 0; t < o.trials; ++t) {
        std::vector<double> spectrum(d);
        for (double& l : spectrum) {
            l = 0.1 + 0.9 * rng.uniform();
        }
        const Matrix sigma = with_spectrum(random_orthogonal(rng, d), spectrum);
        const double h0 = spectral_entropy(sigma).entropy;
        const Matrix dir = random_symmetric_unit(rng, d);
        for (std::size_t k = 0; k < o.scales.size(); ++k) {
            const double dh = std::abs(spectral_entropy(sigma + dir * o.scales[k]).entropy - h0);
            mean_log_dh[k] += std::log(std::max(dh, 1e-300)) / o.trials;
            max_ratio = std::max(max_ratio, dh / o.scales[k]);
            min_ratio = std::min(min_ratio, dh / o.scales[k]);
        }
    }
    std::vector<double> mean_dh(o.scales.size());
    for (std::size_t k = 0; k < o.scales.size(); ++k) {
        mean_dh[k] = std::exp(mean_log_dh[k]);
    }
    const double slope = log_log_slope(o.scales, mean_dh);

    // Delta = 0 gives no change.
    const Matrix eye = Matrix::identity(d);
    const double zero_change = std::abs(spectral_entropy(eye).entropy - spectral_entropy(eye + Matrix(d, d)).entropy);
    // The uniform spectrum is a critical point: a trace-preserving diagonal
    // perturbation moves H only at second order.
    Matrix diag(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        diag(i, i) = (i % 2 == 0 ? 1.0 : -1.0);
    }
    if (d % 2 == 1) {
        diag(d - 1, d - 1) = 0.0;
    }
    diag *= 1.0 / diag.frobenius_norm();
    const double s = 1e-4;
    const double identity_ratio = std::abs(spectral_entropy(eye + diag * s).entropy - spectral_entropy(eye).entropy) / s;

    r.measured = {{"slope", slope},
                  {"max_ratio", max_ratio},
                  {"min_ratio", min_ratio},
                  {"zero_perturbation_change", zero_change},
                  {"identity_first_order_ratio", identity_ratio}};
    r.passed = slope >= 0.9 && slope <= 1.1 && std::isfinite(max_ratio) && zero_change == 0.0 &&
               identity_ratio < 1e-2;
    r.detail = "log-log slope of |dH| against ||Delta||_F over " + std::to_string(o.scales.size()) + " scales";
    return r;
}

double mixing_entropy_drop(const Matrix& z, double alpha, std::size_t shift) {
    const double before = monitor_representation(z).entropy;
    const double after = monitor_representation(intervention::mix(z, alpha, shift)).entropy;
    return before - after;
}

CheckResult check_mixing_lemma(const MixingOptions& o) {
    CheckResult r;
    r.name = "mixing-lemma";
    const std::size_t b = to_size(o.batch);
    const std::size_t d = to_size(o.d);
    Rng rng = Rng::stream(o.seed, "mathcheck-mixing");
    std::vector<double> drops(o.alphas.size(), 0.0);
    for (int t = 0; t < o.trials; ++t) {
        Matrix z(b, d);
        for (double& v : z.values()) {
            v = rng.normal();
        }
        for (std::size_t j = 0; j < d; ++j) {
            double m = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
                m += z(i, j);
            }
            m /= static_cast<double>(b);
            for (std::size_t i = 0; i < b; ++i) {
                z(i, j) -= m;
            }
        }
        for (std::size_t k = 0; k < o.alphas.size(); ++k) {
            double sum = 0.0;
            for (std::size_t shift = 1; shift < b; ++shift) {
                sum += mixing_entropy_drop(z, o.alphas[k], shift);
            }
            drops[k] += sum / static_cast<double>(b - 1) / o.trials;
        }
    }
    bool positive = true;
    double c = 0.0;
    for (std::size_t k = 0; k < o.alphas.size(); ++k) {
        positive = positive && drops[k] > 0.0;
        c = std::max(c, drops[k] / (o.alphas[k] * o.alphas[k]));
    }
    std::vector<double> abs_drops(drops.size());
    std::transform(drops.begin(), drops.end(), abs_drops.begin(), [](double v) { return std::abs(v); });
    const double slope = log_log_slope(o.alphas, abs_drops);
    r.measured = {{"slope", slope}, {"c", c}, {"drop_at_max_alpha", drops.back()}};
    r.passed = positive && slope >= 1.7 && slope <= 2.3;
    r.detail = "mean entropy drop against alpha, averaged over all cyclic shifts; c is the smallest constant "
               "with drop <= c alpha^2 on the grid";
    return r;
}

CheckResult check_effective_rank(const RankOptions& o) {
    CheckResult r;
    r.name = "effective-rank";
    Rng rng = Rng::stream(o.seed, "mathcheck-rank");
    const std::size_t d = to_size(o.d);
    double max_err = 0.0;
    for (int t = 0; t < o.trials; ++t) {
        std::vector<double> spectrum(d);
        for (double& l : spectrum) {
            l = std::exp(3.0 * rng.normal());
        }
        const SpectralSummary s = spectral_entropy(with_spectrum(random_orthogonal(rng, d), spectrum));
        double total = 0.0;
        for (double l : s.eigenvalues) {
            total += l;
        }
        // prod p^-p, evaluated independently of the entropy sum.
        double product = 1.0;
        for (double l : s.eigenvalues) {
            if (l > 0.0) {
                const double p = l / total;
                product *= std::pow(p, -p);
            }
        }
        max_err = std::max(max_err, std::abs(s.effective_rank - product) / product);
    }
    const double uniform = spectral_entropy(Matrix::identity(8)).effective_rank;
    const double rank_one = spectral_entropy(Matrix::diagonal(std::vector<double>{1, 0, 0, 0})).effective_rank;
    const double two = spectral_entropy(Matrix::diagonal(std::vector<double>{1, 1, 0, 0})).effective_rank;

    // Linear decline in H means geometric decline in r_eff.
    const double h0 = 2.0;
    const double rate = 0.05;
    double ratio_spread = 0.0;
    const double expected_ratio = std::exp(-rate);
    for (int k = 0; k < 20; ++k) {
        const double ratio = std::exp(h0 - rate * (k + 1)) / std::exp(h0 - rate * k);
        ratio_spread = std::max(ratio_spread, std::abs(ratio - expected_ratio));
    }

    r.measured = {{"max_relative_error", max_err},
                  {"uniform_d8", uniform},
                  {"rank_one", rank_one},
                  {"spectrum_1100", two},
                  {"geometric_ratio_error", ratio_spread}};
    r.passed = max_err <= 1e-12 && std::abs(uniform - 8.0) <= 1e-12 && std::abs(rank_one - 1.0) <= 1e-12 &&
               std::abs(two - 2.0) <= 1e-12 && ratio_spread <= 1e-12;
    r.detail = "exp(H) against prod p_k^-p_k on random spectra, plus closed forms";
    return r;
}

double ode_hitting_time(double k, double u0, double eps) {
    if (!(k > 0.0) || !(u0 > 0.0) || !(eps > 0.0) || eps > u0) {
        throw std::invalid_argument("ode_hitting_time needs k > 0 and 0 < eps <= u0");
    }
    double lo = 0.0;
    double hi = 1.0;
    while (u0 * std::exp(-k * hi) > eps) {
        hi *= 2.0;
    }
    for (int i = 0; i < 200 && hi - lo > 1e-13 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (u0 * std::exp(-k * mid) > eps ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

CheckResult check_predictive_scaling(const ScalingOptions& o) {
    CheckResult r;
    r.name = "predictive-scaling";
    double max_err = 0.0;
    double min_r2 = 1.0;
    for (double k : o.rates) {
        const double closed = std::log(o.u0 / o.eps) / k;
        max_err = std::max(max_err, std::abs(ode_hitting_time(k, o.u0, o.eps) - closed) / closed);
        std::vector<double> gap;
        std::vector<double> remaining;
        for (int i = 0; i < o.samples; ++i) {
            const double t = closed * i / o.samples;
            gap.push_back(o.u0 * std::exp(-k * t));
            remaining.push_back(closed - t);
        }
        min_r2 = std::min(min_r2, dynamics::fit_power_curve(gap, remaining).r2);
    }
    const double at_eps = ode_hitting_time(0.01, o.u0, o.u0);
    const double halving = ode_hitting_time(0.02, o.u0, o.eps) / ode_hitting_time(0.01, o.u0, o.eps);
    r.measured = {{"max_relative_error", max_err},
                  {"min_r2", min_r2},
                  {"hitting_time_k0.01", ode_hitting_time(0.01, o.u0, o.eps)},
                  {"eps_equals_u0", at_eps},
                  {"doubling_ratio", halving}};
    r.passed = max_err <= 1e-9 && min_r2 > 0.95 && at_eps <= 1e-9 && std::abs(halving - 0.5) <= 1e-9;
    r.detail = "exponential relaxation: closed-form hitting time and power-law fit quality per rate";
    return r;
}

CheckResult threshold_concentration(std::span<const dynamics::TrajectoryLog> logs) {
    CheckResult r;
    r.name = "threshold-concentration";
    r.informational = true;
    std::vector<double> h;
    for (const auto& log : logs) {
        const auto ev = dynamics::detect_events(log);
        if (ev.h_at_grok) {
            h.push_back(*ev.h_at_grok);
        }
    }
    r.measured["grokked_runs"] = static_cast<double>(h.size());
    if (h.size() >= 2) {
        r.measured["mean"] = stats::mean(h);
        r.measured["variance"] = stats::variance(h);
    }
    r.detail = "spread of H at grok across runs; measured, not tested";
    return r;
}

bool Report::all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.informational || c.passed; });
}

Report run_all(std::uint64_t seed, std::span<const dynamics::TrajectoryLog> logs) {
    Report rep;
    SensitivityOptions so;
    so.seed = seed;
    MixingOptions mo;
    mo.seed = seed;
    RankOptions ro;
    ro.seed = seed;
    rep.checks.push_back(check_entropy_sensitivity(so));
    rep.checks.push_back(check_mixing_lemma(mo));
    rep.checks.push_back(check_effective_rank(ro));
    rep.checks.push_back(check_predictive_scaling());
    CheckResult curvature;
    curvature.name = "curvature-link";
    curvature.informational = true;
    curvature.detail = "not measured: the alignment term has no operational definition";
    rep.checks.push_back(curvature);
    if (!logs.empty()) {
        rep.checks.push_back(threshold_concentration(logs));
    }
    return rep;
}

std::string to_json(const Report& report) {
    nlohmann::ordered_json j;
    j["all_passed"] = report.all_passed();
    j["checks"] = nlohmann::ordered_json::array();
    for (const CheckResult& c : report.checks) {
        nlohmann::ordered_json m = nlohmann::ordered_json::object();
        for (const auto& [k, v] : c.measured) {
            m[k] = v;
        }
        j["checks"].push_back({{"name", c.name},
                               {"status", c.informational ? "info" : (c.passed ? "pass" : "fail")},
                               {"measured", m},
                               {"detail", c.detail}});
    }
    return j.dump(2);
}

std::string to_text(const Report& report) {
    std::ostringstream o;
    char buf[64];
    for (const CheckResult& c : report.checks) {
        o << (c.informational ? "INFO" : (c.passed ? "PASS" : "FAIL")) << "  " << c.name;
        for (const auto& [k, v] : c.measured) {
            std::snprintf(buf, sizeof buf, "%.6g", v);
            o << "  " << k << "=" << buf;
        }
        o << '\n';
    }
    o << (report.all_passed() ? "all checks passed" : "some checks failed") << '\n';
    return o.str();
}

} // namespace grokscope::mathcheck
