#include "grokscope/dynamics.hpp"
#include "grokscope/mathcheck.hpp"
#include "grokscope/report.hpp"
#include "grokscope/runner.hpp"
#include "grokscope/stats.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace grokscope;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheckFailed = 3;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 1;
};

runner::RunConfig base_config(const Globals& g, const std::vector<std::string>& overrides) {
    runner::RunConfig cfg = g.config.empty() ? runner::RunConfig{} : runner::RunConfig::load(g.config);
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) {
        cfg.seed = *g.seed;
    }
    if (!g.out.empty()) {
        cfg.out_dir = g.out;
    }
    return cfg;
}

std::vector<std::string> find_logs(const std::string& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().filename() == "log.csv") {
            out.push_back(e.path().string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<dynamics::TrajectoryLog> load_logs(const std::vector<std::string>& files, const std::string& dir) {
    std::vector<std::string> paths = files;
    if (!dir.empty()) {
        const auto found = find_logs(dir);
        paths.insert(paths.end(), found.begin(), found.end());
    }
    if (paths.empty()) {
        throw std::runtime_error("no logs given (use --log or --logs)");
    }
    std::vector<dynamics::TrajectoryLog> logs;
    for (const auto& p : paths) {
        logs.push_back(dynamics::read_log_file(p));
    }
    return logs;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(std::stod(item));
        }
    }
    return out;
}

std::string opt_str(const std::optional<std::int64_t>& v) { return v ? std::to_string(*v) : "none"; }

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    out << text;
}

runner::Condition condition_named(const std::string& name, const runner::RunConfig& base, double alpha) {
    runner::Condition c{name, base};
    c.base.mix_alpha = alpha;
    if (name == "baseline") {
        c.base.intervention = intervention::Kind::none;
    } else {
        c.base.intervention = intervention::parse_kind(name);
    }
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral-entropy monitoring of grokking runs"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "Run config (key = value lines)");
    app.add_option("--seed", g.seed, "Seed override");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--threads", g.threads, "Worker threads for sweeps")->check(CLI::PositiveNumber);

    std::vector<std::string> overrides;
    auto add_set = [&](CLI::App* sub) {
        sub->add_option("--set", overrides, "Config override key=value (repeatable)");
    };

    // train
    auto* train = app.add_subcommand("train", "Train one model and log the trajectory");
    add_set(train);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Run seeds x conditions and build a report");
    std::string seeds_text = "0-4";
    std::string conditions_text = "baseline";
    double alpha = intervention::kDefaultAlpha;
    sweep->add_option("--seeds", seeds_text, "Seeds, e.g. 0-4 or 0,3,7");
    sweep->add_option("--conditions", conditions_text,
                      "Comma list of baseline, mix, mix+norm-control, norm-control");
    sweep->add_option("--alpha", alpha, "Mixing strength");
    add_set(sweep);

    // events
    auto* events = app.add_subcommand("events", "Detect T_grok and T_collapse in a log");
    std::string log_path;
    events->add_option("--log", log_path, "Trajectory CSV")->required();

    // fit
    auto* fit = app.add_subcommand("fit", "Fit the entropy-gap power law");
    std::vector<std::string> log_files;
    std::string logs_dir;
    std::optional<double> hstar;
    fit->add_option("--log", log_files, "Trajectory CSV (repeatable)");
    fit->add_option("--logs", logs_dir, "Directory searched for log.csv files");
    fit->add_option("--hstar", hstar, "Threshold; estimated from the logs when omitted");

    // predict
    auto* predict = app.add_subcommand("predict", "Stream a log through the online predictor");
    std::string fit_path;
    predict->add_option("--log", log_path, "Trajectory CSV")->required();
    predict->add_option("--fit", fit_path, "Fit JSON from `fit`")->required();

    // compare-predictors
    auto* compare = app.add_subcommand("compare-predictors", "R^2 and rho for the candidate predictors");
    compare->add_option("--log", log_files, "Trajectory CSV (repeatable)");
    compare->add_option("--logs", logs_dir, "Directory searched for log.csv files");

    // diagnose
    auto* diagnose = app.add_subcommand("diagnose", "Classify the latest evaluation of a log");
    double hstar_value = 0.0;
    diagnose->add_option("--log", log_path, "Trajectory CSV")->required();
    diagnose->add_option("--hstar", hstar_value, "Threshold")->required();

    // intervene
    auto* intervene = app.add_subcommand("intervene", "Train with representation mixing or norm control");
    std::string kind_text = "mix";
    std::string norms_path;
    intervene->add_option("--kind", kind_text, "mix, mix+norm-control or norm-control");
    intervene->add_option("--alpha", alpha, "Mixing strength");
    intervene->add_option("--norms", norms_path,
                          "Baseline norm schedule CSV; recorded from a fresh baseline run when omitted");
    add_set(intervene);

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "Compare two samples");
    std::string a_text;
    std::string b_text;
    std::string method_text = "expanded-percentile";
    stats_cmd->add_option("--a", a_text, "Comma-separated sample A")->required();
    stats_cmd->add_option("--b", b_text, "Comma-separated sample B");
    stats_cmd->add_option("--bootstrap", method_text, "percentile or expanded-percentile");

    // mathcheck
    auto* mathcheck = app.add_subcommand("mathcheck", "Run the entropy/mixing/scaling property checks");
    bool as_json = false;
    mathcheck->add_flag("--json", as_json, "Print JSON instead of text");
    mathcheck->add_option("--logs", logs_dir, "Optional run logs for the threshold measurement");

    // report
    auto* report_cmd = app.add_subcommand("report", "Rebuild a sweep report from logs on disk");
    std::string report_dir;
    std::string order_text;
    report_cmd->add_option("--dir", report_dir, "Sweep output directory")->required();
    report_cmd->add_option("--conditions", order_text, "Condition order; the first is the baseline");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*train) {
            const runner::RunConfig cfg = base_config(g, overrides);
            const runner::RunResult r = runner::train(cfg, {[](const dynamics::EvalRecord& e) {
                std::fprintf(stderr, "step %6lld  train %.3f  test %.3f  loss %.4f  norm %.2f  H %.4f\n",
                             static_cast<long long>(e.step), e.train_acc, e.test_acc, e.train_loss, e.param_norm,
                             e.entropy);
            }});
            std::cout << runner::run_summary_json(r) << '\n';
            return r.diverged ? kExitRuntime : 0;
        }
        if (*sweep) {
            const runner::RunConfig cfg = base_config(g, overrides);
            std::vector<runner::Condition> conditions;
            std::stringstream ss(conditions_text);
            std::string name;
            while (std::getline(ss, name, ',')) {
                if (!name.empty()) {
                    conditions.push_back(condition_named(name, cfg, alpha));
                }
            }
            const auto runs = runner::sweep(conditions, runner::parse_seed_list(seeds_text), g.threads, cfg.out_dir);
            for (const auto& r : runs) {
                if (!r.failure.empty()) {
                    std::cerr << "run " << r.condition << "/seed" << r.seed << " failed: " << r.failure << '\n';
                }
            }
            const auto logs = report::logs_from_sweep(runs);
            const auto rep = report::build_report(logs, stats::BootstrapOptions{.seed = cfg.seed});
            if (!cfg.out_dir.empty()) {
                write_file(fs::path(cfg.out_dir) / "report.json", report::to_json(rep) + "\n");
                write_file(fs::path(cfg.out_dir) / "report.md", report::to_markdown(rep));
            }
            std::cout << report::to_markdown(rep);
            return 0;
        }
        if (*events) {
            const auto log = dynamics::read_log_file(log_path);
            const auto ev = dynamics::detect_events(log);
            std::cout << "T_grok " << opt_str(ev.t_grok) << "\nT_collapse " << opt_str(ev.t_collapse) << "\nlead "
                      << opt_str(ev.lead()) << '\n';
            if (ev.h_at_grok) {
                std::cout << "H_at_grok " << dynamics::format_double(*ev.h_at_grok) << '\n';
            }
            return 0;
        }
        if (*fit) {
            const auto logs = load_logs(log_files, logs_dir);
            double h = 0.0;
            if (hstar) {
                h = *hstar;
            } else {
                std::vector<dynamics::GrokEvents> evs;
                for (const auto& l : logs) {
                    evs.push_back(dynamics::detect_events(l));
                }
                h = dynamics::estimate_threshold(evs, stats::BootstrapOptions{.seed = g.seed.value_or(0)}).h_star;
            }
            const std::string json = dynamics::to_json(dynamics::fit_powerlaw(logs, h));
            std::cout << json << '\n';
            if (!g.out.empty()) {
                write_file(fs::path(g.out) / "fit.json", json + "\n");
            }
            return 0;
        }
        if (*predict) {
            const auto log = dynamics::read_log_file(log_path);
            std::ifstream in(fit_path);
            if (!in) {
                throw std::runtime_error("cannot open fit '" + fit_path + "'");
            }
            std::stringstream buf;
            buf << in.rdbuf();
            dynamics::OnlinePredictor predictor(dynamics::fit_from_json(buf.str()));
            std::cout << "step,entropy,status,t_hat,lower,upper,stabilised\n";
            for (const auto& r : log) {
                const auto p = predictor.observe(r);
                std::cout << r.step << ',' << dynamics::format_double(r.entropy) << ',' << to_string(p.status) << ','
                          << dynamics::format_double(p.t_hat) << ',' << dynamics::format_double(p.lower) << ','
                          << dynamics::format_double(p.upper) << ',' << (predictor.stabilised() ? 1 : 0) << '\n';
            }
            return 0;
        }
        if (*compare) {
            const auto logs = load_logs(log_files, logs_dir);
            std::cout << "predictor,r2,rho,n_points\n";
            for (const auto& row : dynamics::compare_predictors(logs, g.seed.value_or(0))) {
                std::cout << row.name << ',' << dynamics::format_double(row.r2) << ','
                          << dynamics::format_double(row.rho) << ',' << row.n_points << '\n';
            }
            return 0;
        }
        if (*diagnose) {
            const auto log = dynamics::read_log_file(log_path);
            std::cout << to_string(dynamics::diagnose(log, hstar_value)) << '\n';
            return 0;
        }
        if (*intervene) {
            runner::RunConfig cfg = base_config(g, overrides);
            cfg.intervention = intervention::parse_kind(kind_text);
            cfg.mix_alpha = alpha;
            intervention::NormSchedule schedule;
            runner::TrainHooks hooks;
            if (intervention::uses_norm_control(cfg.intervention)) {
                if (!norms_path.empty()) {
                    cfg.norm_schedule = norms_path;
                } else {
                    runner::RunConfig base = cfg;
                    base.intervention = intervention::Kind::none;
                    base.record_norms = true;
                    base.stop_after_grok_evals = -1;
                    base.out_dir = cfg.out_dir.empty() ? std::string{} : (fs::path(cfg.out_dir) / "baseline").string();
                    std::cerr << "recording baseline norm schedule\n";
                    schedule = runner::train(base).norms;
                    hooks.norm_schedule = &schedule;
                    if (!cfg.out_dir.empty()) {
                        cfg.out_dir = (fs::path(cfg.out_dir) / intervention::to_string(cfg.intervention)).string();
                    }
                }
            }
            const runner::RunResult r = runner::train(cfg, hooks);
            std::cout << runner::run_summary_json(r) << '\n';
            return r.diverged ? kExitRuntime : 0;
        }
        if (*stats_cmd) {
            const auto a = parse_list(a_text);
            const auto b = parse_list(b_text);
            stats::BootstrapOptions opts;
            opts.seed = g.seed.value_or(0);
            opts.method = stats::parse_bootstrap_method(method_text);
            const auto ci = stats::bootstrap_ci(a, opts);
            std::printf("mean_a %.6g  95%% CI [%.6g, %.6g]\n", ci.estimate, ci.lower, ci.upper);
            if (!b.empty()) {
                const auto mwu = stats::mann_whitney_u(a, b, stats::Alternative::greater);
                std::printf("U %.1f  p(one-sided, a > b) %.6g  %s\n", mwu.u, mwu.p, mwu.exact ? "exact" : "normal");
                std::printf("cohens_d %.6g\n", stats::cohens_d(a, b));
                if (a.size() == b.size() && a.size() >= 3) {
                    const auto pr = stats::pearson(a, b);
                    std::printf("pearson_r %.6g  p %.6g\n", pr.r, pr.p);
                }
            }
            return 0;
        }
        if (*mathcheck) {
            std::vector<dynamics::TrajectoryLog> logs;
            if (!logs_dir.empty()) {
                logs = load_logs({}, logs_dir);
            }
            const auto rep = mathcheck::run_all(g.seed.value_or(0), logs);
            std::cout << (as_json ? mathcheck::to_json(rep) + "\n" : mathcheck::to_text(rep));
            if (!g.out.empty()) {
                write_file(fs::path(g.out) / "mathcheck.json", mathcheck::to_json(rep) + "\n");
            }
            return rep.all_passed() ? 0 : kExitCheckFailed;
        }
        if (*report_cmd) {
            std::vector<std::string> order;
            std::stringstream ss(order_text);
            std::string name;
            while (std::getline(ss, name, ',')) {
                if (!name.empty()) {
                    order.push_back(name);
                }
            }
            const auto rep = report::build_report(report::logs_from_dir(report_dir, order),
                                                  stats::BootstrapOptions{.seed = g.seed.value_or(0)});
            const fs::path out = g.out.empty() ? fs::path(report_dir) : fs::path(g.out);
            write_file(out / "report.json", report::to_json(rep) + "\n");
            write_file(out / "report.md", report::to_markdown(rep));
            std::cout << report::to_markdown(rep);
            return 0;
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << '\n' << app.help();
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
