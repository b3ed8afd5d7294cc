#pragma once

#include "grokscope/stats.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace grokscope::dynamics {

inline constexpr double kGrokAccuracy = 0.99;
inline constexpr double kCollapseDrop = 0.05;
inline constexpr std::size_t kCollapseWindow = 5; // evaluations
inline constexpr double kPredictorGate = 0.15;
inline constexpr double kPredictiveBand = 6000.0;
inline constexpr double kNearThreshold = 0.02;
inline constexpr double kOnsetRate = 0.01;
inline constexpr std::int64_t kStagnantSteps = 30'000;

struct EvalRecord {
    std::int64_t step = 0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double train_loss = 0.0;
    double param_norm = 0.0;
    double entropy = 0.0; // normalised
    double eff_rank = 0.0;

    bool operator==(const EvalRecord&) const = default;
};

using TrajectoryLog = std::vector<EvalRecord>;

inline constexpr const char* kLogHeader = "step,train_acc,test_acc,train_loss,param_norm,entropy,eff_rank";

// Shortest round-trip decimal form, so read(write(x)) == x bit for bit.
std::string format_double(double v);
void write_log_csv(std::ostream& out, const TrajectoryLog& log);
void write_log_row(std::ostream& out, const EvalRecord& r);
TrajectoryLog read_log_csv(std::istream& in);
TrajectoryLog read_log_file(const std::string& path);

// Throws if steps are not strictly increasing or a value is non-finite.
void validate_log(const TrajectoryLog& log);

struct GrokEvents {
    std::optional<std::int64_t> t_grok;
    std::optional<std::int64_t> t_collapse;
    std::optional<double> h_at_grok;

    // T_grok - T_collapse when both exist.
    std::optional<std::int64_t> lead() const;
};

// T_grok: first eval with test_acc >= threshold. T_collapse: first eval i with
// H(i - 5) - H(i) > 0.05, searched only up to T_grok so evaluations appended
// after grokking cannot move it.
GrokEvents detect_events(const TrajectoryLog& log, double grok_threshold = kGrokAccuracy);

struct ThresholdEstimate {
    double h_star = 0.0;
    stats::BootstrapCI ci;
    std::size_t n_runs = 0;
};

// Mean of H at grok over grokked runs, with a bootstrap CI. Needs >= 3 grokked runs.
ThresholdEstimate estimate_threshold(std::span<const GrokEvents> events,
                                     const stats::BootstrapOptions& options = {});

struct PowerLawFit {
    double c1 = 0.0;
    double gamma = 1.0;
    double c2 = 0.0;
    double h_star = 0.0;
    double r2 = 0.0;
    std::size_t n_points = 0;

    bool operator==(const PowerLawFit&) const = default;
};

struct FitOptions {
    double gamma_min = 0.25;
    double gamma_max = 4.0;
    double gamma_step = 0.01;
    std::size_t min_points = 10;
};

// Least squares y = c1 * x^gamma + c2: grid over gamma, closed-form (c1, c2)
// at each grid point. Requires x > 0.
PowerLawFit fit_power_curve(std::span<const double> x, std::span<const double> y,
                            const FitOptions& options = {});

struct FitPoint {
    std::int64_t step = 0;
    double entropy = 0.0;
    double gap = 0.0;     // entropy - h_star
    double delta_t = 0.0; // t_grok - step
    std::size_t run = 0;
};

// Pre-grok evaluations (step < T_grok) of grokked runs with entropy above h_star.
std::vector<FitPoint> collect_fit_points(std::span<const TrajectoryLog> logs, double h_star);

PowerLawFit fit_powerlaw(std::span<const FitPoint> points, double h_star, const FitOptions& options = {});
PowerLawFit fit_powerlaw(std::span<const TrajectoryLog> logs, double h_star, const FitOptions& options = {});

std::string to_json(const PowerLawFit& fit);
PowerLawFit fit_from_json(const std::string& text);

enum class PredictionStatus { active, not_yet_active, below_threshold };
std::string to_string(PredictionStatus status);

struct Prediction {
    PredictionStatus status = PredictionStatus::not_yet_active;
    double t_hat = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

// T = t + c1 * (h - h*)^gamma + c2, active once h < h* + gate. At h <= h* the
// gap is taken as zero and the status is below_threshold.
Prediction predict_grok_time(std::int64_t t, double h, const PowerLawFit& fit, double gate = kPredictorGate,
                             double band = kPredictiveBand);

// Streams evaluations; "stabilised" means three consecutive active predictions
// all within 5% of each other.
class OnlinePredictor {
public:
    explicit OnlinePredictor(PowerLawFit fit, std::size_t window = 3, double tolerance = 0.05)
        : fit_(fit), window_(window), tolerance_(tolerance) {}

    Prediction observe(const EvalRecord& record);
    bool stabilised() const;
    const std::vector<double>& recent() const noexcept { return recent_; }

private:
    PowerLawFit fit_;
    std::size_t window_;
    double tolerance_;
    std::vector<double> recent_;
};

struct LooEntry {
    std::size_t run = 0;
    std::int64_t t_grok = 0;
    std::int64_t t_query = 0;
    double predicted = 0.0;
    double ape = 0.0; // |predicted - t_grok| / t_grok
};

struct LooResult {
    std::vector<LooEntry> entries;
    double mape = 0.0;
};

// For each grokked run: estimate H* and the fit from the other runs, then
// predict from the evaluation `lookback` steps before its T_grok.
LooResult leave_one_out(std::span<const TrajectoryLog> logs, std::int64_t lookback = 200,
                        const FitOptions& options = {});

struct PredictorRow {
    std::string name;
    double r2 = 0.0;
    double rho = 0.0; // Pearson r between predictor and delta T
    std::size_t n_points = 0;
    PowerLawFit fit;
};

// random, abs-norm, norm-gap, H-gap; H* is the mean H at grok. Needs >= 2 grokked runs.
std::vector<PredictorRow> compare_predictors(std::span<const TrajectoryLog> logs, std::uint64_t seed = 0);

enum class Diagnosis { phase_one, phase_two_onset, near_threshold, collapse_without_generalisation,
                       stagnant, generalised };
std::string to_string(Diagnosis d);

// Entropy drop over the last five evaluations (0 when the log is shorter).
double collapse_rate(const TrajectoryLog& log);

// Classifies the latest evaluation.
Diagnosis diagnose(const TrajectoryLog& log, double h_star);

} // namespace grokscope::dynamics
