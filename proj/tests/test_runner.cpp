#include "doctest.h"

#include "grokscope/runner.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace grokscope;
using namespace grokscope::runner;

namespace {

RunConfig tiny() {
    RunConfig c;
    c.task = TaskSpec{TaskKind::mod_add, 11, 0.5};
    c.transformer.d_model = 16;
    c.transformer.heads = 2;
    c.transformer.d_ff = 32;
    c.batch_size = 16;
    c.probe_size = 32;
    c.max_steps = 40;
    c.eval_every = 10;
    c.optim.lr = 3e-3;
    return c;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace

TEST_CASE("config text round trip") {
    RunConfig c = tiny();
    c.arch = Architecture::mlp;
    c.intervention = intervention::Kind::mix;
    c.mix_alpha = 0.125;
    c.optim.decay_biases = false;
    c.transformer.norm = NormPlacement::pre;
    c.seed = 17;
    CHECK(RunConfig::parse(c.serialise()) == c);
    RunConfig d = RunConfig::parse("# comment\nseed = 3\nmodulus = 13\n", c);
    CHECK(d.seed == 3);
    CHECK(d.task.modulus == 13);
    CHECK(d.mix_alpha == 0.125);
    CHECK_THROWS(RunConfig::parse("colour = blue\n"));
    CHECK_THROWS(RunConfig::parse("seed = -x\n"));
    c.set("lr", "0.01");
    CHECK(c.optim.lr == 0.01);
}

TEST_CASE("config validation") {
    RunConfig c = tiny();
    c.probe_size = 1000;
    CHECK_THROWS(c.validate());
    c = tiny();
    c.stop_when_stable = true;
    CHECK_THROWS(c.validate());
    c = tiny();
    c.task.modulus = 12;
    CHECK_THROWS(c.validate());
}

TEST_CASE("zero steps gives a single evaluation") {
    RunConfig c = tiny();
    c.max_steps = 0;
    const RunResult r = train(c);
    REQUIRE(r.log.size() == 1);
    CHECK(r.log[0].step == 0);
    CHECK(r.steps_run == 0);
    CHECK(r.log[0].entropy > 0.0);
    CHECK(r.log[0].entropy <= 1.0);
}

TEST_CASE("training is deterministic and reduces loss") {
    const RunResult a = train(tiny());
    const RunResult b = train(tiny());
    CHECK(a.log == b.log);
    REQUIRE(a.log.size() == 5);
    CHECK(a.log.back().train_loss < a.log.front().train_loss);
    RunConfig other = tiny();
    other.seed = 1;
    CHECK_FALSE(train(other).log == a.log);
    RunConfig mlp = tiny();
    mlp.arch = Architecture::mlp;
    mlp.mlp = MlpShape{16, 12};
    const RunResult m = train(mlp);
    CHECK(m.log.size() == 5);
    CHECK(m.diagnostics.size() == 5);
}

TEST_CASE("divergence keeps the partial log") {
    RunConfig c = tiny();
    c.optim.lr = 1e300;
    c.optim.weight_decay = 0.0;
    const RunResult r = train(c);
    CHECK(r.diverged);
    CHECK_FALSE(r.error.empty());
    CHECK(r.log.size() >= 1);
    CHECK(r.steps_run < c.max_steps);
}

TEST_CASE("outputs are written and replay identically") {
    const auto dir = std::filesystem::temp_directory_path() / "grokscope_runner_test";
    std::filesystem::remove_all(dir);
    RunConfig c = tiny();
    c.out_dir = (dir / "a").string();
    const RunResult r = train(c);
    CHECK(std::filesystem::exists(dir / "a" / "log.csv"));
    CHECK(std::filesystem::exists(dir / "a" / "run.json"));
    CHECK(std::filesystem::exists(dir / "a" / "diagnostics.csv"));
    const RunConfig reloaded = RunConfig::load((dir / "a" / "config.cfg").string());
    CHECK(reloaded == c);
    CHECK(dynamics::read_log_file((dir / "a" / "log.csv").string()) == r.log);
    RunConfig again = reloaded;
    again.out_dir = (dir / "b").string();
    train(again);
    CHECK(read_file(dir / "a" / "log.csv") == read_file(dir / "b" / "log.csv"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("sweep records failures and continues") {
    RunConfig good = tiny();
    good.max_steps = 10;
    RunConfig bad = good;
    bad.probe_size = 100000;
    const auto runs = sweep({{"baseline", good}, {"broken", bad}}, {0, 1}, 1);
    REQUIRE(runs.size() == 4);
    int ok = 0;
    int failed = 0;
    for (const SweepRun& s : runs) {
        if (s.result) {
            ++ok;
            CHECK(s.condition == "baseline");
        } else {
            ++failed;
            CHECK_FALSE(s.failure.empty());
        }
    }
    CHECK(ok == 2);
    CHECK(failed == 2);
    CHECK_THROWS(sweep({{"baseline", good}}, {}, 1));
}

TEST_CASE("sweep with norm control reuses baseline schedules") {
    RunConfig base = tiny();
    base.max_steps = 20;
    RunConfig nc = base;
    nc.intervention = intervention::Kind::norm_control;
    const auto runs = sweep({{"baseline", base}, {"norm-control", nc}}, {0}, 1);
    REQUIRE(runs.size() == 2);
    REQUIRE(runs[0].result);
    REQUIRE(runs[1].result);
    // Pure norm control replays the baseline exactly up to rounding.
    for (std::size_t i = 0; i < runs[0].result->log.size(); ++i) {
        CHECK(runs[1].result->log[i].param_norm == doctest::Approx(runs[0].result->log[i].param_norm).epsilon(1e-9));
    }
}

TEST_CASE("seed lists") {
    CHECK(parse_seed_list("0-4") == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
    CHECK(parse_seed_list("0,2,5") == std::vector<std::uint64_t>{0, 2, 5});
    CHECK(parse_seed_list("7") == std::vector<std::uint64_t>{7});
    CHECK_THROWS(parse_seed_list(""));
    CHECK_THROWS(parse_seed_list("4-1"));
    CHECK_THROWS(parse_seed_list("a"));
}
