#include "grokscope/dynamics.hpp"

#include "grokscope/core/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace grokscope::dynamics {

// ---- log IO --------------------------------------------------------------------

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_log_row(std::ostream& out, const EvalRecord& r) {
    out << r.step << ',' << format_double(r.train_acc) << ',' << format_double(r.test_acc) << ','
        << format_double(r.train_loss) << ',' << format_double(r.param_norm) << ','
        << format_double(r.entropy) << ',' << format_double(r.eff_rank) << '\n';
}

void write_log_csv(std::ostream& out, const TrajectoryLog& log) {
    out << kLogHeader << '\n';
    for (const EvalRecord& r : log) {
        write_log_row(out, r);
    }
}

namespace {

double parse_double(std::string_view field, std::size_t line) {
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw std::runtime_error("log line " + std::to_string(line) + ": bad number '" + std::string(field) + "'");
    }
    return v;
}

} // namespace

TrajectoryLog read_log_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("log is empty");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != kLogHeader) {
        throw std::runtime_error("unexpected log header '" + line + "'");
    }
    TrajectoryLog log;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 7) {
            throw std::runtime_error("log line " + std::to_string(lineno) + ": expected 7 fields, got " +
                                     std::to_string(fields.size()));
        }
        EvalRecord r;
        std::int64_t step = 0;
        const auto res = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), step);
        if (res.ec != std::errc() || res.ptr != fields[0].data() + fields[0].size()) {
            throw std::runtime_error("log line " + std::to_string(lineno) + ": bad step");
        }
        r.step = step;
        r.train_acc = parse_double(fields[1], lineno);
        r.test_acc = parse_double(fields[2], lineno);
        r.train_loss = parse_double(fields[3], lineno);
        r.param_norm = parse_double(fields[4], lineno);
        r.entropy = parse_double(fields[5], lineno);
        r.eff_rank = parse_double(fields[6], lineno);
        log.push_back(r);
    }
    return log;
}

TrajectoryLog read_log_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open log '" + path + "'");
    }
    return read_log_csv(in);
}

void validate_log(const TrajectoryLog& log) {
    for (std::size_t i = 0; i < log.size(); ++i) {
        const EvalRecord& r = log[i];
        if (i > 0 && r.step <= log[i - 1].step) {
            throw std::invalid_argument("log steps not strictly increasing at row " + std::to_string(i));
        }
        for (double v : {r.train_acc, r.test_acc, r.train_loss, r.param_norm, r.entropy, r.eff_rank}) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("non-finite value in log row " + std::to_string(i));
            }
        }
    }
}

// ---- events --------------------------------------------------------------------

std::optional<std::int64_t> GrokEvents::lead() const {
    if (t_grok && t_collapse) {
        return *t_grok - *t_collapse;
    }
    return std::nullopt;
}

GrokEvents detect_events(const TrajectoryLog& log, double grok_threshold) {
    GrokEvents ev;
    std::size_t end = log.size();
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (log[i].test_acc >= grok_threshold) {
            ev.t_grok = log[i].step;
            ev.h_at_grok = log[i].entropy;
            end = i + 1;
            break;
        }
    }
    for (std::size_t i = kCollapseWindow; i < end; ++i) {
        if (log[i - kCollapseWindow].entropy - log[i].entropy > kCollapseDrop) {
            ev.t_collapse = log[i].step;
            break;
        }
    }
    return ev;
}

ThresholdEstimate estimate_threshold(std::span<const GrokEvents> events, const stats::BootstrapOptions& options) {
    std::vector<double> h;
    for (const GrokEvents& e : events) {
        if (e.h_at_grok) {
            h.push_back(*e.h_at_grok);
        }
    }
    if (h.size() < 3) {
        throw std::invalid_argument("threshold estimate needs at least 3 grokked runs, got " +
                                    std::to_string(h.size()) +
                                    "; run more pilot seeds to convergence before calibrating H*");
    }
    ThresholdEstimate out;
    out.ci = stats::bootstrap_ci(h, options);
    out.h_star = out.ci.estimate;
    out.n_runs = h.size();
    return out;
}

// ---- power law -----------------------------------------------------------------

PowerLawFit fit_power_curve(std::span<const double> x, std::span<const double> y, const FitOptions& options) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("fit_power_curve: length mismatch");
    }
    if (x.size() < options.min_points) {
        throw std::invalid_argument("power-law fit needs at least " + std::to_string(options.min_points) +
                                    " points, got " + std::to_string(x.size()));
    }
    for (double v : x) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("power-law fit needs positive finite predictor values");
        }
    }
    const auto n = static_cast<double>(x.size());
    const double ybar = stats::mean(y);
    std::vector<double> logx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        logx[i] = std::log(x[i]);
    }

    PowerLawFit best;
    double best_sse = std::numeric_limits<double>::infinity();
    const auto steps = static_cast<long>(std::llround((options.gamma_max - options.gamma_min) / options.gamma_step));
    std::vector<double> xg(x.size());
    for (long k = 0; k <= steps; ++k) {
        const double gamma = options.gamma_min + static_cast<double>(k) * options.gamma_step;
        double xbar = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            xg[i] = std::exp(gamma * logx[i]);
            xbar += xg[i];
        }
        xbar /= n;
        double sxx = 0.0;
        double sxy = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            sxx += (xg[i] - xbar) * (xg[i] - xbar);
            sxy += (xg[i] - xbar) * (y[i] - ybar);
        }
        const double c1 = sxx > 0.0 ? sxy / sxx : 0.0;
        const double c2 = ybar - c1 * xbar;
        double sse = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = y[i] - (c1 * xg[i] + c2);
            sse += r * r;
        }
        if (sse < best_sse) {
            best_sse = sse;
            best.c1 = c1;
            best.c2 = c2;
            best.gamma = gamma;
        }
    }
    std::vector<double> fitted(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        fitted[i] = best.c1 * std::pow(x[i], best.gamma) + best.c2;
    }
    best.r2 = stats::r_squared(y, fitted);
    best.n_points = x.size();
    return best;
}

std::vector<FitPoint> collect_fit_points(std::span<const TrajectoryLog> logs, double h_star) {
    std::vector<FitPoint> points;
    for (std::size_t run = 0; run < logs.size(); ++run) {
        const GrokEvents ev = detect_events(logs[run]);
        if (!ev.t_grok) {
            continue;
        }
        for (const EvalRecord& r : logs[run]) {
            if (r.step >= *ev.t_grok) {
                break;
            }
            if (r.entropy > h_star) {
                points.push_back(FitPoint{r.step, r.entropy, r.entropy - h_star,
                                          static_cast<double>(*ev.t_grok - r.step), run});
            }
        }
    }
    return points;
}

PowerLawFit fit_powerlaw(std::span<const FitPoint> points, double h_star, const FitOptions& options) {
    std::vector<double> x;
    std::vector<double> y;
    for (const FitPoint& p : points) {
        x.push_back(p.gap);
        y.push_back(p.delta_t);
    }
    PowerLawFit fit = fit_power_curve(x, y, options);
    fit.h_star = h_star;
    return fit;
}

PowerLawFit fit_powerlaw(std::span<const TrajectoryLog> logs, double h_star, const FitOptions& options) {
    const std::vector<FitPoint> points = collect_fit_points(logs, h_star);
    return fit_powerlaw(points, h_star, options);
}

std::string to_json(const PowerLawFit& fit) {
    nlohmann::ordered_json j;
    j["c1"] = fit.c1;
    j["gamma"] = fit.gamma;
    j["c2"] = fit.c2;
    j["h_star"] = fit.h_star;
    j["r2"] = fit.r2;
    j["n_points"] = fit.n_points;
    return j.dump(2);
}

PowerLawFit fit_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    PowerLawFit fit;
    fit.c1 = j.at("c1").get<double>();
    fit.gamma = j.at("gamma").get<double>();
    fit.c2 = j.at("c2").get<double>();
    fit.h_star = j.at("h_star").get<double>();
    fit.r2 = j.value("r2", 0.0);
    fit.n_points = j.value("n_points", std::size_t{0});
    return fit;
}

// ---- prediction ----------------------------------------------------------------

std::string to_string(PredictionStatus status) {
    switch (status) {
    case PredictionStatus::active: return "active";
    case PredictionStatus::not_yet_active: return "not-yet-active";
    case PredictionStatus::below_threshold: return "below-threshold";
    }
    return "unknown";
}

Prediction predict_grok_time(std::int64_t t, double h, const PowerLawFit& fit, double gate, double band) {
    Prediction p;
    const double gap = h - fit.h_star;
    if (gap <= 0.0) {
        p.status = PredictionStatus::below_threshold;
    } else if (gap < gate) {
        p.status = PredictionStatus::active;
    } else {
        p.status = PredictionStatus::not_yet_active;
    }
    const double g = std::max(gap, 0.0);
    p.t_hat = static_cast<double>(t) + fit.c1 * std::pow(g, fit.gamma) + fit.c2;
    p.lower = p.t_hat - band;
    p.upper = p.t_hat + band;
    return p;
}

Prediction OnlinePredictor::observe(const EvalRecord& record) {
    const Prediction p = predict_grok_time(record.step, record.entropy, fit_);
    if (p.status == PredictionStatus::active) {
        recent_.push_back(p.t_hat);
        if (recent_.size() > window_) {
            recent_.erase(recent_.begin());
        }
    } else {
        recent_.clear();
    }
    return p;
}

bool OnlinePredictor::stabilised() const {
    if (recent_.size() < window_) {
        return false;
    }
    const auto [lo, hi] = std::minmax_element(recent_.begin(), recent_.end());
    return *hi - *lo <= tolerance_ * std::abs(*hi);
}

LooResult leave_one_out(std::span<const TrajectoryLog> logs, std::int64_t lookback, const FitOptions& options) {
    std::vector<GrokEvents> events;
    for (const TrajectoryLog& log : logs) {
        events.push_back(detect_events(log));
    }
    LooResult out;
    double total = 0.0;
    for (std::size_t held = 0; held < logs.size(); ++held) {
        if (!events[held].t_grok) {
            continue;
        }
        std::vector<TrajectoryLog> others;
        double h_sum = 0.0;
        std::size_t h_count = 0;
        for (std::size_t i = 0; i < logs.size(); ++i) {
            if (i != held && events[i].t_grok) {
                others.push_back(logs[i]);
                h_sum += *events[i].h_at_grok;
                ++h_count;
            }
        }
        if (h_count == 0) {
            throw std::invalid_argument("leave-one-out needs at least 2 grokked runs");
        }
        const double h_star = h_sum / static_cast<double>(h_count);
        const PowerLawFit fit = fit_powerlaw(others, h_star, options);
        const std::int64_t t_grok = *events[held].t_grok;
        const std::int64_t target = t_grok - lookback;
        const EvalRecord* query = nullptr;
        for (const EvalRecord& r : logs[held]) {
            if (r.step <= target) {
                query = &r;
            }
        }
        if (query == nullptr) {
            continue;
        }
        LooEntry e;
        e.run = held;
        e.t_grok = t_grok;
        e.t_query = query->step;
        e.predicted = predict_grok_time(query->step, query->entropy, fit).t_hat;
        e.ape = std::abs(e.predicted - static_cast<double>(t_grok)) / static_cast<double>(t_grok);
        total += e.ape;
        out.entries.push_back(e);
    }
    if (!out.entries.empty()) {
        out.mape = total / static_cast<double>(out.entries.size());
    }
    return out;
}

std::vector<PredictorRow> compare_predictors(std::span<const TrajectoryLog> logs, std::uint64_t seed) {
    struct RunInfo {
        std::int64_t t_grok;
        double norm_at_grok;
        double h_at_grok;
    };
    std::vector<RunInfo> info(logs.size(), RunInfo{-1, 0.0, 0.0});
    std::size_t grokked = 0;
    double h_sum = 0.0;
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const GrokEvents ev = detect_events(logs[i]);
        if (!ev.t_grok) {
            continue;
        }
        for (const EvalRecord& r : logs[i]) {
            if (r.step == *ev.t_grok) {
                info[i] = RunInfo{r.step, r.param_norm, r.entropy};
            }
        }
        h_sum += info[i].h_at_grok;
        ++grokked;
    }
    if (grokked < 2) {
        throw std::invalid_argument("compare_predictors needs at least 2 grokked runs");
    }
    const double h_star = h_sum / static_cast<double>(grokked);

    Rng rng = Rng::stream(seed, "random-predictor");
    const char* names[] = {"random", "abs-norm", "norm-gap", "H-gap"};
    std::vector<std::vector<double>> xs(4);
    std::vector<std::vector<double>> ys(4);
    for (std::size_t i = 0; i < logs.size(); ++i) {
        if (info[i].t_grok < 0) {
            continue;
        }
        for (const EvalRecord& r : logs[i]) {
            if (r.step >= info[i].t_grok) {
                break;
            }
            const double dt = static_cast<double>(info[i].t_grok - r.step);
            const double candidates[] = {rng.uniform(), r.param_norm, info[i].norm_at_grok - r.param_norm,
                                         r.entropy - h_star};
            for (std::size_t k = 0; k < 4; ++k) {
                if (candidates[k] > 0.0) {
                    xs[k].push_back(candidates[k]);
                    ys[k].push_back(dt);
                }
            }
        }
    }
    std::vector<PredictorRow> rows;
    for (std::size_t k = 0; k < 4; ++k) {
        PredictorRow row;
        row.name = names[k];
        row.n_points = xs[k].size();
        if (xs[k].size() >= FitOptions{}.min_points) {
            row.fit = fit_power_curve(xs[k], ys[k]);
            row.fit.h_star = k == 3 ? h_star : 0.0;
            row.r2 = row.fit.r2;
            row.rho = stats::pearson(xs[k], ys[k]).r;
        }
        rows.push_back(row);
    }
    return rows;
}

// ---- diagnosis -----------------------------------------------------------------

std::string to_string(Diagnosis d) {
    switch (d) {
    case Diagnosis::phase_one: return "phase-I";
    case Diagnosis::phase_two_onset: return "phase-II-onset";
    case Diagnosis::near_threshold: return "near-threshold";
    case Diagnosis::collapse_without_generalisation: return "collapse-without-generalisation";
    case Diagnosis::stagnant: return "stagnant";
    case Diagnosis::generalised: return "generalised";
    }
    return "unknown";
}

double collapse_rate(const TrajectoryLog& log) {
    if (log.size() <= kCollapseWindow) {
        return 0.0;
    }
    return log[log.size() - 1 - kCollapseWindow].entropy - log.back().entropy;
}

Diagnosis diagnose(const TrajectoryLog& log, double h_star) {
    if (log.empty()) {
        throw std::invalid_argument("diagnose needs a nonempty log");
    }
    const EvalRecord& now = log.back();
    const double gap = now.entropy - h_star;
    if (std::abs(gap) < kNearThreshold) {
        return Diagnosis::near_threshold;
    }
    if (gap < 0.0) {
        return now.test_acc < 0.5 ? Diagnosis::collapse_without_generalisation : Diagnosis::generalised;
    }
    if (now.step >= kStagnantSteps) {
        // No collapse-sized drop anywhere in the trailing 30k steps.
        double peak = now.entropy;
        for (const EvalRecord& r : log) {
            if (r.step >= now.step - kStagnantSteps) {
                peak = std::max(peak, r.entropy);
            }
        }
        if (peak - now.entropy <= kCollapseDrop) {
            return Diagnosis::stagnant;
        }
    }
    return collapse_rate(log) > kOnsetRate ? Diagnosis::phase_two_onset : Diagnosis::phase_one;
}

} // namespace grokscope::dynamics
