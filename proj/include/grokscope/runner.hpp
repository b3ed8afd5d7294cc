#pragma once

#include "grokscope/dynamics.hpp"
#include "grokscope/intervention.hpp"
#include "grokscope/model.hpp"
#include "grokscope/optim.hpp"
#include "grokscope/tasks.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grokscope::runner {

struct RunConfig {
    TaskSpec task;
    Architecture arch = Architecture::transformer;
    TransformerShape transformer;
    MlpShape mlp;
    AdamWConfig optim;
    int batch_size = 512;
    std::int64_t max_steps = 50'000;
    std::int64_t eval_every = 200;
    std::size_t probe_size = kDefaultProbeSize;
    ProbeSource probe_source = ProbeSource::train;
    double grok_threshold = dynamics::kGrokAccuracy;
    std::uint64_t seed = 0;
    intervention::Kind intervention = intervention::Kind::none;
    double mix_alpha = intervention::kDefaultAlpha;
    std::string norm_schedule; // CSV path; needed by the norm-control kinds
    std::string out_dir;       // empty: nothing is written
    // Stop this many evaluations after T_grok; negative runs to max_steps.
    std::int64_t stop_after_grok_evals = -1;
    // Stop once online predictions stabilise; needs `fit` (a fit JSON path).
    bool stop_when_stable = false;
    std::string fit;
    bool record_norms = false; // keep the per-step norm schedule (norms.csv)
    bool save_checkpoint = false;

    ModelSpec model_spec() const;
    void validate() const;

    // Flat `key = value` lines; parse(serialise()) == *this.
    std::string serialise() const;
    static RunConfig parse(std::string_view text);
    static RunConfig parse(std::string_view text, const RunConfig& base);
    static RunConfig load(const std::string& path);
    static RunConfig load(const std::string& path, const RunConfig& base);
    // Applies one key=value override.
    void set(std::string_view key, std::string_view value);

    bool operator==(const RunConfig&) const = default;
};

// Extra per-evaluation measurements that are not part of the trajectory CSV.
struct Diagnostic {
    std::int64_t step = 0;
    double fourier = 0.0;       // NaN for S5
    double test_entropy = 0.0;  // NaN when the test split is smaller than the probe
    double probe_gap = 0.0;     // |H(train probe) - H(test probe)|
};

struct RunResult {
    RunConfig config;
    dynamics::TrajectoryLog log;
    dynamics::GrokEvents events;
    std::vector<Diagnostic> diagnostics;
    intervention::NormSchedule norms;
    std::int64_t steps_run = 0;
    bool diverged = false;
    bool stopped_early = false;
    std::string error;
};

struct TrainHooks {
    std::function<void(const dynamics::EvalRecord&)> on_eval;
    // Used instead of reading config.norm_schedule when set.
    const intervention::NormSchedule* norm_schedule = nullptr;
};

// Runs one training job. Divergence ends the run with the partial log kept
// and `diverged` set. Writes outputs when config.out_dir is set.
RunResult train(const RunConfig& config, const TrainHooks& hooks = {});

void write_outputs(const RunResult& result, const std::string& dir);
std::string run_summary_json(const RunResult& result);

struct Condition {
    std::string name;
    RunConfig base;
};

struct SweepRun {
    std::string condition;
    std::uint64_t seed = 0;
    std::optional<RunResult> result;
    std::string failure; // set when the run threw
};

// Runs every condition for every seed. Baseline runs (intervention none) go
// first so norm-control runs can reuse their schedules; when base.out_dir is
// set, outputs go to <out>/<condition>/seed<k>/. Individual failures are
// recorded and the sweep continues.
std::vector<SweepRun> sweep(const std::vector<Condition>& conditions, const std::vector<std::uint64_t>& seeds,
                            int threads, const std::string& out_dir = {});

// "0-4" or "0,2,5" style lists.
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

} // namespace grokscope::runner
