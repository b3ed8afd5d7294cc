#include "grokscope/runner.hpp"

#include "grokscope/core/rng.hpp"
#include "grokscope/monitor.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace grokscope::runner {

namespace fs = std::filesystem;
using dynamics::format_double;

// ---- config --------------------------------------------------------------------

ModelSpec RunConfig::model_spec() const { return ModelSpec::for_task(task, arch, transformer, mlp); }

void RunConfig::validate() const {
    if (batch_size < 1) {
        throw std::invalid_argument("batch_size must be positive");
    }
    if (max_steps < 0 || eval_every < 1) {
        throw std::invalid_argument("max_steps must be >= 0 and eval_every >= 1");
    }
    validate_task(task);
    const std::size_t n_train = train_size(task);
    const std::size_t source_size = probe_source == ProbeSource::train ? n_train : task.total_pairs() - n_train;
    if (probe_size > source_size) {
        throw std::invalid_argument("probe_size " + std::to_string(probe_size) + " exceeds the " +
                                    to_string(probe_source) + " split (" + std::to_string(source_size) + ")");
    }
    if (probe_size < 2) {
        throw std::invalid_argument("probe_size must be at least 2");
    }
    if (static_cast<int>(probe_size) <= model_spec().representation_dim()) {
        throw std::invalid_argument("probe_size must exceed the representation width (" +
                                    std::to_string(model_spec().representation_dim()) + ")");
    }
    if (intervention::uses_mixing(intervention) && !(mix_alpha > 0.0 && mix_alpha < 1.0)) {
        throw std::invalid_argument("mix_alpha must lie in (0, 1)");
    }
    if (stop_when_stable && fit.empty()) {
        throw std::invalid_argument("stop_when_stable needs a fit file");
    }
    if (!(optim.lr > 0.0) || optim.weight_decay < 0.0 || optim.eps <= 0.0 || optim.beta1 < 0.0 ||
        optim.beta1 >= 1.0 || optim.beta2 < 0.0 || optim.beta2 >= 1.0) {
        throw std::invalid_argument("invalid optimizer constants");
    }
    if (arch == Architecture::transformer && transformer.d_model % transformer.heads != 0) {
        throw std::invalid_argument("d_model must be a multiple of heads");
    }
}

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
    T out{};
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw std::invalid_argument("config key '" + std::string(key) + "': bad value '" + std::string(value) +
                                    "'");
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
    if (value == "true" || value == "1") {
        return true;
    }
    if (value == "false" || value == "0") {
        return false;
    }
    throw std::invalid_argument("config key '" + std::string(key) + "': expected true or false");
}

} // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    using intervention::parse_kind;
    if (key == "task") {
        task.kind = parse_task_kind(value);
    } else if (key == "modulus") {
        task.modulus = parse_number<int>(key, value);
    } else if (key == "train_fraction") {
        task.train_fraction = parse_number<double>(key, value);
    } else if (key == "arch") {
        arch = parse_architecture(value);
    } else if (key == "d_model") {
        transformer.d_model = parse_number<int>(key, value);
    } else if (key == "heads") {
        transformer.heads = parse_number<int>(key, value);
    } else if (key == "d_ff") {
        transformer.d_ff = parse_number<int>(key, value);
    } else if (key == "layer_norm") {
        transformer.norm = parse_norm_placement(value);
    } else if (key == "hidden1") {
        mlp.hidden1 = parse_number<int>(key, value);
    } else if (key == "hidden2") {
        mlp.hidden2 = parse_number<int>(key, value);
    } else if (key == "lr") {
        optim.lr = parse_number<double>(key, value);
    } else if (key == "beta1") {
        optim.beta1 = parse_number<double>(key, value);
    } else if (key == "beta2") {
        optim.beta2 = parse_number<double>(key, value);
    } else if (key == "eps") {
        optim.eps = parse_number<double>(key, value);
    } else if (key == "weight_decay") {
        optim.weight_decay = parse_number<double>(key, value);
    } else if (key == "decay_biases") {
        optim.decay_biases = parse_bool(key, value);
    } else if (key == "batch_size") {
        batch_size = parse_number<int>(key, value);
    } else if (key == "max_steps") {
        max_steps = parse_number<std::int64_t>(key, value);
    } else if (key == "eval_every") {
        eval_every = parse_number<std::int64_t>(key, value);
    } else if (key == "probe_size") {
        probe_size = parse_number<std::size_t>(key, value);
    } else if (key == "probe_source") {
        probe_source = parse_probe_source(value);
    } else if (key == "grok_threshold") {
        grok_threshold = parse_number<double>(key, value);
    } else if (key == "seed") {
        seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "intervention") {
        intervention = parse_kind(value);
    } else if (key == "mix_alpha") {
        mix_alpha = parse_number<double>(key, value);
    } else if (key == "norm_schedule") {
        norm_schedule = std::string(value);
    } else if (key == "out_dir") {
        out_dir = std::string(value);
    } else if (key == "stop_after_grok_evals") {
        stop_after_grok_evals = parse_number<std::int64_t>(key, value);
    } else if (key == "stop_when_stable") {
        stop_when_stable = parse_bool(key, value);
    } else if (key == "fit") {
        fit = std::string(value);
    } else if (key == "record_norms") {
        record_norms = parse_bool(key, value);
    } else if (key == "save_checkpoint") {
        save_checkpoint = parse_bool(key, value);
    } else {
        throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
    }
}

std::string RunConfig::serialise() const {
    std::ostringstream o;
    auto b = [](bool v) { return v ? "true" : "false"; };
    o << "task = " << to_string(task.kind) << '\n'
      << "modulus = " << task.modulus << '\n'
      << "train_fraction = " << format_double(task.train_fraction) << '\n'
      << "arch = " << to_string(arch) << '\n'
      << "d_model = " << transformer.d_model << '\n'
      << "heads = " << transformer.heads << '\n'
      << "d_ff = " << transformer.d_ff << '\n'
      << "layer_norm = " << to_string(transformer.norm) << '\n'
      << "hidden1 = " << mlp.hidden1 << '\n'
      << "hidden2 = " << mlp.hidden2 << '\n'
      << "lr = " << format_double(optim.lr) << '\n'
      << "beta1 = " << format_double(optim.beta1) << '\n'
      << "beta2 = " << format_double(optim.beta2) << '\n'
      << "eps = " << format_double(optim.eps) << '\n'
      << "weight_decay = " << format_double(optim.weight_decay) << '\n'
      << "decay_biases = " << b(optim.decay_biases) << '\n'
      << "batch_size = " << batch_size << '\n'
      << "max_steps = " << max_steps << '\n'
      << "eval_every = " << eval_every << '\n'
      << "probe_size = " << probe_size << '\n'
      << "probe_source = " << to_string(probe_source) << '\n'
      << "grok_threshold = " << format_double(grok_threshold) << '\n'
      << "seed = " << seed << '\n'
      << "intervention = " << intervention::to_string(intervention) << '\n'
      << "mix_alpha = " << format_double(mix_alpha) << '\n'
      << "norm_schedule = " << norm_schedule << '\n'
      << "out_dir = " << out_dir << '\n'
      << "stop_after_grok_evals = " << stop_after_grok_evals << '\n'
      << "stop_when_stable = " << b(stop_when_stable) << '\n'
      << "fit = " << fit << '\n'
      << "record_norms = " << b(record_norms) << '\n'
      << "save_checkpoint = " << b(save_checkpoint) << '\n';
    return o.str();
}

RunConfig RunConfig::parse(std::string_view text) { return parse(text, RunConfig{}); }

RunConfig RunConfig::load(const std::string& path) { return load(path, RunConfig{}); }

RunConfig RunConfig::parse(std::string_view text, const RunConfig& base) {
    RunConfig c = base;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        const std::string body = trim(line);
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        }
        c.set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path, const RunConfig& base) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config '" + path + "'");
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), base);
}

// ---- training ------------------------------------------------------------------

namespace {

constexpr std::size_t kEvalChunk = 2048;

struct SplitMetrics {
    double accuracy = 0.0;
    double loss = 0.0;
};

SplitMetrics evaluate_split(const Model& model, const std::vector<Example>& examples) {
    SplitMetrics m;
    if (examples.empty()) {
        return m;
    }
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, examples.size() - start);
        const std::span<const Example> chunk(examples.data() + start, n);
        const ForwardOutput out = model.forward(chunk);
        std::vector<int> targets(n);
        for (std::size_t i = 0; i < n; ++i) {
            targets[i] = chunk[i].label;
            const auto row = out.logits.row(i);
            const auto best = std::max_element(row.begin(), row.end()) - row.begin();
            if (best == chunk[i].label) {
                ++correct;
            }
        }
        loss_sum += ad::softmax_cross_entropy(out.logits, targets) * static_cast<double>(n);
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    m.loss = loss_sum / static_cast<double>(examples.size());
    return m;
}

std::size_t param_index(const ParamSet& params, std::string_view name) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name == name) {
            return i;
        }
    }
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

} // namespace

RunResult train(const RunConfig& config, const TrainHooks& hooks) {
    config.validate();
    RunResult result;
    result.config = config;

    const Dataset data = generate(config.task, config.seed);
    const ProbeSet probe = make_probe(data, config.probe_source, config.seed, config.probe_size);
    std::optional<ProbeSet> other_probe;
    const ProbeSource other = config.probe_source == ProbeSource::train ? ProbeSource::test : ProbeSource::train;
    if ((other == ProbeSource::train ? data.train : data.test).size() >= config.probe_size) {
        other_probe = make_probe(data, other, config.seed, config.probe_size);
    }

    Model model = Model::init(config.model_spec(), config.seed);
    AdamW optimizer(config.optim);
    const std::size_t head = param_index(model.params(), "head");

    intervention::NormSchedule loaded;
    const intervention::NormSchedule* schedule = hooks.norm_schedule;
    if (intervention::uses_norm_control(config.intervention)) {
        if (schedule == nullptr) {
            if (config.norm_schedule.empty()) {
                throw std::invalid_argument("norm-control runs need a norm_schedule file");
            }
            loaded = intervention::NormSchedule::read_file(config.norm_schedule);
            schedule = &loaded;
        }
        if (!schedule->covers(config.max_steps)) {
            throw std::invalid_argument("norm schedule has " + std::to_string(schedule->size()) +
                                        " entries, run needs " + std::to_string(config.max_steps + 1));
        }
    }

    std::optional<dynamics::OnlinePredictor> predictor;
    if (config.stop_when_stable) {
        std::ifstream in(config.fit);
        if (!in) {
            throw std::runtime_error("cannot open fit '" + config.fit + "'");
        }
        std::stringstream buf;
        buf << in.rdbuf();
        predictor.emplace(dynamics::fit_from_json(buf.str()));
    }

    const bool is_modular = config.task.is_modular();
    std::int64_t step = 0;
    std::int64_t evals_after_grok = -1;

    auto evaluate = [&] {
        const SplitMetrics train_m = evaluate_split(model, data.train);
        const SplitMetrics test_m = evaluate_split(model, data.test);
        const SpectralSummary summary = monitor_representation(model.forward(probe.examples).z);
        dynamics::EvalRecord r;
        r.step = step;
        r.train_acc = train_m.accuracy;
        r.test_acc = test_m.accuracy;
        r.train_loss = train_m.loss;
        r.param_norm = param_norm(model.params());
        r.entropy = summary.normalized_entropy;
        r.eff_rank = summary.effective_rank;
        result.log.push_back(r);

        Diagnostic d;
        d.step = step;
        d.fourier = is_modular ? fourier_alignment(model.token_embedding(), config.task.modulus)
                               : std::numeric_limits<double>::quiet_NaN();
        if (other_probe) {
            d.test_entropy = monitor_representation(model.forward(other_probe->examples).z).normalized_entropy;
            d.probe_gap = std::abs(d.test_entropy - r.entropy);
        } else {
            d.test_entropy = std::numeric_limits<double>::quiet_NaN();
            d.probe_gap = std::numeric_limits<double>::quiet_NaN();
        }
        result.diagnostics.push_back(d);
        if (hooks.on_eval) {
            hooks.on_eval(r);
        }
        if (evals_after_grok < 0 && r.test_acc >= config.grok_threshold) {
            evals_after_grok = 0;
        } else if (evals_after_grok >= 0) {
            ++evals_after_grok;
        }
        if (predictor) {
            predictor->observe(r);
        }
    };

    Rng order_rng = Rng::stream(config.seed, "batch-order");
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::size_t cursor = order.size();
    std::vector<Example> batch;
    std::vector<int> targets;
    const auto batch_size = static_cast<std::size_t>(config.batch_size);

    try {
        if (config.record_norms) {
            result.norms.record(0, param_norm(model.params()));
        }
        evaluate();
        while (step < config.max_steps) {
            if (config.stop_after_grok_evals >= 0 && evals_after_grok >= config.stop_after_grok_evals) {
                result.stopped_early = true;
                break;
            }
            if (predictor && predictor->stabilised()) {
                result.stopped_early = true;
                break;
            }
            if (cursor == order.size()) {
                order_rng.shuffle(std::span<std::size_t>(order));
                cursor = 0;
            }
            const std::size_t n = std::min(batch_size, order.size() - cursor);
            batch.clear();
            targets.clear();
            for (std::size_t i = 0; i < n; ++i) {
                batch.push_back(data.train[order[cursor + i]]);
                targets.push_back(batch.back().label);
            }
            cursor += n;
            ++step;

            ad::Tape tape;
            const ForwardGraph g = model.build(tape, batch, true);
            ad::Var loss;
            // A one-example batch has no derangement, so it trains unmixed.
            if (intervention::uses_mixing(config.intervention) && n >= 2) {
                const ad::Var mixed = intervention::mix(tape, g.z, config.mix_alpha);
                const ad::Var mixed_logits = ad::matmul(tape, mixed, g.params[head]);
                loss = intervention::mixed_loss(tape, g.logits, mixed_logits, targets);
            } else {
                loss = ad::softmax_cross_entropy(tape, g.logits, targets);
            }
            tape.backward(loss);
            std::vector<Matrix> grads;
            grads.reserve(g.params.size());
            for (const ad::Var& v : g.params) {
                grads.push_back(tape.grad(v));
            }
            optimizer.step(model.params(), grads);
            if (schedule != nullptr && intervention::uses_norm_control(config.intervention)) {
                intervention::apply_norm_control(model.params(), *schedule, step);
            }
            if (config.record_norms) {
                result.norms.record(step, param_norm(model.params()));
            }
            if (step % config.eval_every == 0) {
                evaluate();
            }
        }
    } catch (const NumericError& e) {
        result.diverged = true;
        result.error = "diverged at step " + std::to_string(step) + ": " + e.what();
    }
    result.steps_run = step;
    result.events = dynamics::detect_events(result.log, config.grok_threshold);

    if (!config.out_dir.empty()) {
        write_outputs(result, config.out_dir);
        if (config.save_checkpoint) {
            std::ofstream out(fs::path(config.out_dir) / "model.ckpt");
            save_checkpoint(out, model);
        }
    }
    return result;
}

std::string run_summary_json(const RunResult& r) {
    nlohmann::ordered_json j;
    j["config"] = nlohmann::ordered_json::object();
    std::istringstream in(r.config.serialise());
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        j["config"][line.substr(0, eq)] = line.substr(eq + 3);
    }
    auto opt = [](const auto& v) -> nlohmann::ordered_json {
        if (v) {
            return *v;
        }
        return nullptr;
    };
    j["summary"] = {
        {"t_grok", opt(r.events.t_grok)},
        {"t_collapse", opt(r.events.t_collapse)},
        {"lead", opt(r.events.lead())},
        {"h_at_grok", opt(r.events.h_at_grok)},
        {"steps_run", r.steps_run},
        {"evaluations", r.log.size()},
        {"diverged", r.diverged},
        {"stopped_early", r.stopped_early},
        {"error", r.error},
    };
    if (!r.log.empty()) {
        const auto [lo, hi] = std::minmax_element(r.log.begin(), r.log.end(), [](const auto& a, const auto& b) {
            return a.entropy < b.entropy;
        });
        (void)hi;
        j["summary"]["min_entropy"] = lo->entropy;
        j["summary"]["final_test_acc"] = r.log.back().test_acc;
        double max_test = 0.0;
        for (const auto& e : r.log) {
            max_test = std::max(max_test, e.test_acc);
        }
        j["summary"]["max_test_acc"] = max_test;
    }
    double max_fourier = 0.0;
    double max_gap = 0.0;
    for (const Diagnostic& d : r.diagnostics) {
        if (!std::isnan(d.fourier)) {
            max_fourier = std::max(max_fourier, d.fourier);
        }
        if (!std::isnan(d.probe_gap)) {
            max_gap = std::max(max_gap, d.probe_gap);
        }
    }
    j["summary"]["max_fourier_alignment"] = max_fourier;
    j["summary"]["max_probe_gap"] = max_gap;
    return j.dump(2);
}

void write_outputs(const RunResult& result, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "log.csv");
        dynamics::write_log_csv(out, result.log);
    }
    {
        std::ofstream out(fs::path(dir) / "diagnostics.csv");
        out << "step,fourier_alignment,test_probe_entropy,probe_gap\n";
        for (const Diagnostic& d : result.diagnostics) {
            out << d.step << ',' << format_double(d.fourier) << ',' << format_double(d.test_entropy) << ','
                << format_double(d.probe_gap) << '\n';
        }
    }
    {
        std::ofstream out(fs::path(dir) / "run.json");
        out << run_summary_json(result) << '\n';
    }
    {
        std::ofstream out(fs::path(dir) / "config.cfg");
        out << result.config.serialise();
    }
    if (result.norms.size() > 0) {
        std::ofstream out(fs::path(dir) / "norms.csv");
        result.norms.write_csv(out);
    }
}

// ---- sweeps --------------------------------------------------------------------

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
    std::vector<std::uint64_t> seeds;
    std::string_view rest = text;
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        const std::string item = trim(rest.substr(0, comma));
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        if (item.empty()) {
            continue;
        }
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
            seeds.push_back(parse_number<std::uint64_t>("seeds", item));
        } else {
            const auto lo = parse_number<std::uint64_t>("seeds", std::string_view(item).substr(0, dash));
            const auto hi = parse_number<std::uint64_t>("seeds", std::string_view(item).substr(dash + 1));
            if (hi < lo) {
                throw std::invalid_argument("seed range '" + item + "' is reversed");
            }
            for (std::uint64_t s = lo; s <= hi; ++s) {
                seeds.push_back(s);
            }
        }
    }
    if (seeds.empty()) {
        throw std::invalid_argument("seed list is empty");
    }
    return seeds;
}

std::vector<SweepRun> sweep(const std::vector<Condition>& conditions, const std::vector<std::uint64_t>& seeds,
                            int threads, const std::string& out_dir) {
    if (conditions.empty() || seeds.empty()) {
        throw std::invalid_argument("sweep needs at least one condition and one seed");
    }
    const bool needs_schedules = std::any_of(conditions.begin(), conditions.end(), [](const Condition& c) {
        return intervention::uses_norm_control(c.base.intervention) && c.base.norm_schedule.empty();
    });
    const auto baseline_it = std::find_if(conditions.begin(), conditions.end(), [](const Condition& c) {
        return c.base.intervention == intervention::Kind::none;
    });
    if (needs_schedules && baseline_it == conditions.end()) {
        throw std::invalid_argument("norm-control conditions need a baseline condition in the same sweep");
    }

    struct Job {
        std::size_t condition;
        std::uint64_t seed;
        std::size_t slot;
    };
    std::vector<SweepRun> runs;
    std::vector<Job> first_phase;
    std::vector<Job> second_phase;
    for (std::size_t c = 0; c < conditions.size(); ++c) {
        for (std::uint64_t seed : seeds) {
            const Job job{c, seed, runs.size()};
            runs.push_back(SweepRun{conditions[c].name, seed, std::nullopt, {}});
            (conditions[c].base.intervention == intervention::Kind::none ? first_phase : second_phase).push_back(job);
        }
    }
    const std::size_t baseline_index = static_cast<std::size_t>(baseline_it - conditions.begin());

    auto run_phase = [&](const std::vector<Job>& jobs) {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t k = next++; k < jobs.size(); k = next++) {
                const Job& job = jobs[k];
                SweepRun& slot = runs[job.slot];
                try {
                    RunConfig cfg = conditions[job.condition].base;
                    cfg.seed = job.seed;
                    cfg.out_dir = out_dir.empty() ? std::string{}
                                                  : (fs::path(out_dir) / conditions[job.condition].name /
                                                     ("seed" + std::to_string(job.seed)))
                                                        .string();
                    TrainHooks hooks;
                    if (needs_schedules && job.condition == baseline_index) {
                        cfg.record_norms = true;
                        cfg.stop_after_grok_evals = -1;
                    }
                    if (intervention::uses_norm_control(cfg.intervention) && cfg.norm_schedule.empty()) {
                        for (const SweepRun& r : runs) {
                            if (r.condition == conditions[baseline_index].name && r.seed == job.seed && r.result) {
                                hooks.norm_schedule = &r.result->norms;
                            }
                        }
                        if (hooks.norm_schedule == nullptr) {
                            throw std::runtime_error("baseline run for seed " + std::to_string(job.seed) +
                                                     " is missing; no norm schedule available");
                        }
                    }
                    slot.result = train(cfg, hooks);
                } catch (const std::exception& e) {
                    slot.failure = e.what();
                }
            }
        };
        const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
        std::vector<std::thread> pool;
        for (int t = 1; t < n; ++t) {
            pool.emplace_back(worker);
        }
        worker();
        for (std::thread& t : pool) {
            t.join();
        }
    };
    run_phase(first_phase);
    run_phase(second_phase);
    return runs;
}

} // namespace grokscope::runner
