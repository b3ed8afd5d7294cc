#pragma once

#include "grokscope/dynamics.hpp"
#include "grokscope/runner.hpp"
#include "grokscope/stats.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace grokscope::report {

struct ConditionLogs {
    std::string name;
    std::vector<std::uint64_t> seeds;
    std::vector<dynamics::TrajectoryLog> logs; // parallel to seeds
    std::int64_t max_steps = 0;                // censoring time for runs that never grok
};

struct RunSummary {
    std::string condition;
    std::uint64_t seed = 0;
    dynamics::GrokEvents events;
    // T_grok, or max_steps for a run that never grokked.
    double t_grok_censored = 0.0;
    bool censored = false;
};

struct ConditionComparison {
    std::string baseline;
    std::string treatment;
    double mean_baseline = 0.0;
    double mean_treatment = 0.0;
    double delta_t = 0.0; // treatment - baseline
    stats::MannWhitneyResult mwu; // treatment greater than baseline
    std::optional<double> cohens_d;
    std::size_t positive_pairs = 0; // seed-matched pairs with treatment later
    std::size_t pairs = 0;
};

struct ExperimentReport {
    std::vector<RunSummary> runs;
    std::optional<dynamics::ThresholdEstimate> threshold;
    std::string threshold_note;
    std::vector<ConditionComparison> comparisons;
    std::optional<dynamics::PowerLawFit> fit;
    std::string fit_note;
    std::vector<dynamics::PredictorRow> predictors;
    std::optional<dynamics::LooResult> loo;
    std::optional<stats::PearsonResult> norm_entropy_correlation;
};

// The first condition is the baseline; threshold, fit, predictor table and
// leave-one-out are computed from it.
ExperimentReport build_report(std::span<const ConditionLogs> conditions,
                              const stats::BootstrapOptions& options = {});

std::vector<ConditionLogs> logs_from_sweep(std::span<const runner::SweepRun> runs);
// Reads <dir>/<condition>/seed<k>/log.csv (and config.cfg for max_steps).
// Condition order follows `order` when given, else alphabetical with
// "baseline" first.
std::vector<ConditionLogs> logs_from_dir(const std::string& dir, const std::vector<std::string>& order = {});

std::string to_json(const ExperimentReport& report);
std::string to_markdown(const ExperimentReport& report);

} // namespace grokscope::report
