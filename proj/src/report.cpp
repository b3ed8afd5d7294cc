#include "grokscope/report.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>

namespace grokscope::report {

namespace fs = std::filesystem;

ExperimentReport build_report(std::span<const ConditionLogs> conditions, const stats::BootstrapOptions& options) {
    if (conditions.empty()) {
        throw std::invalid_argument("report needs at least one condition");
    }
    ExperimentReport rep;
    std::vector<std::vector<double>> times(conditions.size());
    for (std::size_t c = 0; c < conditions.size(); ++c) {
        const ConditionLogs& cond = conditions[c];
        for (std::size_t i = 0; i < cond.logs.size(); ++i) {
            RunSummary s;
            s.condition = cond.name;
            s.seed = cond.seeds[i];
            s.events = dynamics::detect_events(cond.logs[i]);
            s.censored = !s.events.t_grok;
            s.t_grok_censored = s.events.t_grok ? static_cast<double>(*s.events.t_grok)
                                                : static_cast<double>(cond.max_steps);
            times[c].push_back(s.t_grok_censored);
            rep.runs.push_back(s);
        }
    }

    const ConditionLogs& base = conditions.front();
    std::vector<dynamics::GrokEvents> base_events;
    for (const auto& log : base.logs) {
        base_events.push_back(dynamics::detect_events(log));
    }
    try {
        rep.threshold = dynamics::estimate_threshold(base_events, options);
    } catch (const std::invalid_argument& e) {
        rep.threshold_note = e.what();
    }
    if (rep.threshold) {
        try {
            rep.fit = dynamics::fit_powerlaw(base.logs, rep.threshold->h_star);
        } catch (const std::invalid_argument& e) {
            rep.fit_note = e.what();
        }
        try {
            rep.predictors = dynamics::compare_predictors(base.logs, options.seed);
            rep.loo = dynamics::leave_one_out(base.logs);
        } catch (const std::invalid_argument& e) {
            rep.fit_note += rep.fit_note.empty() ? e.what() : std::string("; ") + e.what();
        }
    }
    std::vector<double> norms;
    std::vector<double> entropies;
    for (const auto& log : base.logs) {
        for (const auto& r : log) {
            norms.push_back(r.param_norm);
            entropies.push_back(r.entropy);
        }
    }
    if (norms.size() >= 3) {
        rep.norm_entropy_correlation = stats::pearson(norms, entropies);
    }

    for (std::size_t c = 1; c < conditions.size(); ++c) {
        ConditionComparison cmp;
        cmp.baseline = base.name;
        cmp.treatment = conditions[c].name;
        if (times[0].empty() || times[c].empty()) {
            rep.comparisons.push_back(cmp);
            continue;
        }
        cmp.mean_baseline = stats::mean(times[0]);
        cmp.mean_treatment = stats::mean(times[c]);
        cmp.delta_t = cmp.mean_treatment - cmp.mean_baseline;
        cmp.mwu = stats::mann_whitney_u(times[c], times[0], stats::Alternative::greater);
        try {
            cmp.cohens_d = stats::cohens_d(times[c], times[0]);
        } catch (const std::exception&) {
            cmp.cohens_d.reset();
        }
        for (std::size_t i = 0; i < conditions[c].seeds.size(); ++i) {
            for (std::size_t j = 0; j < base.seeds.size(); ++j) {
                if (base.seeds[j] == conditions[c].seeds[i]) {
                    ++cmp.pairs;
                    if (times[c][i] > times[0][j]) {
                        ++cmp.positive_pairs;
                    }
                }
            }
        }
        rep.comparisons.push_back(cmp);
    }
    return rep;
}

std::vector<ConditionLogs> logs_from_sweep(std::span<const runner::SweepRun> runs) {
    std::vector<ConditionLogs> out;
    for (const runner::SweepRun& r : runs) {
        if (!r.result) {
            continue;
        }
        auto it = std::find_if(out.begin(), out.end(), [&](const ConditionLogs& c) { return c.name == r.condition; });
        if (it == out.end()) {
            out.push_back(ConditionLogs{r.condition, {}, {}, r.result->config.max_steps});
            it = out.end() - 1;
        }
        it->seeds.push_back(r.seed);
        it->logs.push_back(r.result->log);
        it->max_steps = std::max(it->max_steps, r.result->config.max_steps);
    }
    return out;
}

std::vector<ConditionLogs> logs_from_dir(const std::string& dir, const std::vector<std::string>& order) {
    if (!fs::is_directory(dir)) {
        throw std::runtime_error("'" + dir + "' is not a directory");
    }
    std::map<std::string, ConditionLogs> found;
    for (const auto& cond_entry : fs::directory_iterator(dir)) {
        if (!cond_entry.is_directory()) {
            continue;
        }
        const std::string name = cond_entry.path().filename().string();
        std::vector<std::pair<std::uint64_t, fs::path>> seed_dirs;
        for (const auto& seed_entry : fs::directory_iterator(cond_entry.path())) {
            const std::string s = seed_entry.path().filename().string();
            if (!seed_entry.is_directory() || s.rfind("seed", 0) != 0 || !fs::exists(seed_entry.path() / "log.csv")) {
                continue;
            }
            seed_dirs.emplace_back(std::stoull(s.substr(4)), seed_entry.path());
        }
        if (seed_dirs.empty()) {
            continue;
        }
        std::sort(seed_dirs.begin(), seed_dirs.end());
        ConditionLogs c;
        c.name = name;
        for (const auto& [seed, path] : seed_dirs) {
            c.seeds.push_back(seed);
            c.logs.push_back(dynamics::read_log_file((path / "log.csv").string()));
            std::int64_t max_steps = c.logs.back().empty() ? 0 : c.logs.back().back().step;
            if (fs::exists(path / "config.cfg")) {
                max_steps = runner::RunConfig::load((path / "config.cfg").string()).max_steps;
            }
            c.max_steps = std::max(c.max_steps, max_steps);
        }
        found.emplace(name, std::move(c));
    }
    std::vector<ConditionLogs> out;
    for (const std::string& name : order) {
        auto it = found.find(name);
        if (it == found.end()) {
            throw std::runtime_error("no runs for condition '" + name + "' under " + dir);
        }
        out.push_back(std::move(it->second));
        found.erase(it);
    }
    if (order.empty()) {
        if (auto it = found.find("baseline"); it != found.end()) {
            out.push_back(std::move(it->second));
            found.erase(it);
        }
        for (auto& [name, c] : found) {
            out.push_back(std::move(c));
        }
    }
    if (out.empty()) {
        throw std::runtime_error("no run logs found under " + dir);
    }
    return out;
}

namespace {

nlohmann::ordered_json opt_json(const std::optional<std::int64_t>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::string fmt(double v, const char* spec = "%.4g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

} // namespace

std::string to_json(const ExperimentReport& rep) {
    nlohmann::ordered_json j;
    j["runs"] = nlohmann::ordered_json::array();
    for (const RunSummary& r : rep.runs) {
        j["runs"].push_back({{"condition", r.condition},
                             {"seed", r.seed},
                             {"t_grok", opt_json(r.events.t_grok)},
                             {"t_collapse", opt_json(r.events.t_collapse)},
                             {"lead", opt_json(r.events.lead())},
                             {"h_at_grok", opt_json(r.events.h_at_grok)},
                             {"censored", r.censored}});
    }
    if (rep.threshold) {
        j["threshold"] = {{"h_star", rep.threshold->h_star},
                          {"ci_lower", rep.threshold->ci.lower},
                          {"ci_upper", rep.threshold->ci.upper},
                          {"resamples", rep.threshold->ci.resamples},
                          {"n_runs", rep.threshold->n_runs}};
    } else {
        j["threshold"] = {{"error", rep.threshold_note}};
    }
    j["comparisons"] = nlohmann::ordered_json::array();
    for (const ConditionComparison& c : rep.comparisons) {
        j["comparisons"].push_back({{"baseline", c.baseline},
                                    {"treatment", c.treatment},
                                    {"mean_t_grok_baseline", c.mean_baseline},
                                    {"mean_t_grok_treatment", c.mean_treatment},
                                    {"delta_t", c.delta_t},
                                    {"mwu_u", c.mwu.u},
                                    {"mwu_p", c.mwu.p},
                                    {"mwu_exact", c.mwu.exact},
                                    {"cohens_d", opt_json(c.cohens_d)},
                                    {"positive_pairs", c.positive_pairs},
                                    {"pairs", c.pairs}});
    }
    if (rep.fit) {
        j["fit"] = nlohmann::ordered_json::parse(dynamics::to_json(*rep.fit));
    } else {
        j["fit"] = {{"error", rep.fit_note}};
    }
    j["predictors"] = nlohmann::ordered_json::array();
    for (const auto& p : rep.predictors) {
        j["predictors"].push_back({{"name", p.name}, {"r2", p.r2}, {"rho", p.rho}, {"n_points", p.n_points}});
    }
    if (rep.loo) {
        nlohmann::ordered_json loo;
        loo["mape"] = rep.loo->mape;
        loo["entries"] = nlohmann::ordered_json::array();
        for (const auto& e : rep.loo->entries) {
            loo["entries"].push_back({{"run", e.run},
                                      {"t_grok", e.t_grok},
                                      {"t_query", e.t_query},
                                      {"predicted", e.predicted},
                                      {"ape", e.ape}});
        }
        j["leave_one_out"] = loo;
    }
    if (rep.norm_entropy_correlation) {
        j["norm_entropy_correlation"] = {{"r", rep.norm_entropy_correlation->r},
                                         {"p", rep.norm_entropy_correlation->p},
                                         {"n", rep.norm_entropy_correlation->n}};
    }
    return j.dump(2);
}

std::string to_markdown(const ExperimentReport& rep) {
    std::ostringstream o;
    o << "## Runs\n\n| condition | seed | T_grok | T_collapse | lead | H at grok |\n|---|---|---|---|---|---|\n";
    for (const RunSummary& r : rep.runs) {
        auto i64 = [](const std::optional<std::int64_t>& v) { return v ? std::to_string(*v) : std::string("-"); };
        o << "| " << r.condition << " | " << r.seed << " | " << i64(r.events.t_grok) << " | "
          << i64(r.events.t_collapse) << " | " << i64(r.events.lead()) << " | "
          << (r.events.h_at_grok ? fmt(*r.events.h_at_grok, "%.3f") : "-") << " |\n";
    }
    o << "\n## Threshold\n\n";
    if (rep.threshold) {
        o << "H* = " << fmt(rep.threshold->h_star, "%.3f") << ", 95% CI [" << fmt(rep.threshold->ci.lower, "%.3f")
          << ", " << fmt(rep.threshold->ci.upper, "%.3f") << "] over " << rep.threshold->n_runs << " runs\n";
    } else {
        o << "not available: " << rep.threshold_note << '\n';
    }
    if (!rep.comparisons.empty()) {
        o << "\n## Conditions\n\n| condition | mean T_grok | delta T | U | p (one-sided) | Cohen's d | later pairs |\n"
          << "|---|---|---|---|---|---|---|\n";
        for (const ConditionComparison& c : rep.comparisons) {
            o << "| " << c.treatment << " vs " << c.baseline << " | " << fmt(c.mean_treatment, "%.0f") << " | "
              << fmt(c.delta_t, "%+.0f") << " | " << fmt(c.mwu.u, "%.1f") << " | " << fmt(c.mwu.p, "%.3f") << " | "
              << (c.cohens_d ? fmt(*c.cohens_d, "%.2f") : "-") << " | " << c.positive_pairs << "/" << c.pairs
              << " |\n";
        }
    }
    o << "\n## Power-law fit\n\n";
    if (rep.fit) {
        o << "| C1 | gamma | C2 | H* | R^2 | points |\n|---|---|---|---|---|---|\n| " << fmt(rep.fit->c1) << " | "
          << fmt(rep.fit->gamma, "%.2f") << " | " << fmt(rep.fit->c2) << " | " << fmt(rep.fit->h_star, "%.3f")
          << " | " << fmt(rep.fit->r2, "%.3f") << " | " << rep.fit->n_points << " |\n";
    } else {
        o << "not available: " << (rep.fit_note.empty() ? rep.threshold_note : rep.fit_note) << '\n';
    }
    if (!rep.predictors.empty()) {
        o << "\n## Predictors\n\n| predictor | R^2 | rho | points |\n|---|---|---|---|\n";
        for (const auto& p : rep.predictors) {
            o << "| " << p.name << " | " << fmt(p.r2, "%.3f") << " | " << fmt(p.rho, "%.2f") << " | " << p.n_points
              << " |\n";
        }
    }
    if (rep.loo && !rep.loo->entries.empty()) {
        o << "\nLeave-one-out MAPE: " << fmt(100.0 * rep.loo->mape, "%.1f") << "%\n";
    }
    if (rep.norm_entropy_correlation) {
        o << "\nPearson r(norm, H) = " << fmt(rep.norm_entropy_correlation->r, "%.3f")
          << " (p = " << fmt(rep.norm_entropy_correlation->p, "%.2g") << ", n = " << rep.norm_entropy_correlation->n
          << ")\n";
    }
    return o.str();
}

} // namespace grokscope::report
