#pragma once

#include "grokscope/core/matrix.hpp"
#include "grokscope/dynamics.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace grokscope::mathcheck {

struct CheckResult {
    std::string name;
    bool passed = false;
    bool informational = false; // reported without pass/fail
    std::map<std::string, double> measured;
    std::string detail;
};

struct SensitivityOptions {
    int trials = 20;
    int d = 8;
    std::vector<double> scales{1e-3, 1e-4, 1e-5, 1e-6};
    std::uint64_t seed = 0;
};

struct MixingOptions {
    int trials = 20;
    int batch = 64;
    int d = 8;
    std::vector<double> alphas{0.02, 0.03, 0.05, 0.08, 0.12, 0.2, 0.3};
    std::uint64_t seed = 0;
};

struct RankOptions {
    int trials = 50;
    int d = 16;
    std::uint64_t seed = 0;
};

struct ScalingOptions {
    std::vector<double> rates{0.005, 0.01, 0.02, 0.04};
    double u0 = 0.2;
    double eps = 0.002;
    int samples = 50;
};

// Entropy is Lipschitz near a well-conditioned covariance: |dH| scales like
// ||Delta||_F (log-log slope in [0.9, 1.1]).
CheckResult check_entropy_sensitivity(const SensitivityOptions& options = {});

// Mixing lowers entropy by O(alpha^2): log-log slope of the mean drop in [1.7, 2.3].
// The drop is averaged over every cyclic shift of a centred batch.
CheckResult check_mixing_lemma(const MixingOptions& options = {});

// Entropy drop for one batch and shift.
double mixing_entropy_drop(const Matrix& z, double alpha, std::size_t shift);

// r_eff = exp(H) against an independent product form, plus closed forms.
CheckResult check_effective_rank(const RankOptions& options = {});

// du/dt = -k u: hitting time of eps is log(u0/eps)/k; the power-law fitter on
// such trajectories reaches R^2 > 0.95.
CheckResult check_predictive_scaling(const ScalingOptions& options = {});

// Time for u0 * exp(-k t) to reach eps, found by bisection on the solution.
double ode_hitting_time(double k, double u0, double eps);

// Spread of H at grok across runs (informational).
CheckResult threshold_concentration(std::span<const dynamics::TrajectoryLog> logs);

struct Report {
    std::vector<CheckResult> checks;
    bool all_passed() const;
};

Report run_all(std::uint64_t seed = 0, std::span<const dynamics::TrajectoryLog> logs = {});

std::string to_json(const Report& report);
std::string to_text(const Report& report);

} // namespace grokscope::mathcheck
