#include "doctest.h"

#include "grokscope/core/rng.hpp"
#include "grokscope/intervention.hpp"
#include "grokscope/runner.hpp"
#include "test_support.hpp"

#include <cmath>
#include <sstream>

using namespace grokscope;
using namespace grokscope::intervention;

namespace {

double plain_ce(const Matrix& logits, std::span<const int> y) {
    long double total = 0.0L;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        long double z = 0.0L;
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            z += std::exp(static_cast<long double>(logits(i, c)));
        }
        total += std::log(z) - logits(i, static_cast<std::size_t>(y[i]));
    }
    return static_cast<double>(total / static_cast<long double>(logits.rows()));
}

runner::RunConfig tiny_config() {
    runner::RunConfig c;
    c.task = TaskSpec{TaskKind::mod_add, 11, 0.5};
    c.transformer.d_model = 16;
    c.transformer.heads = 2;
    c.transformer.d_ff = 32;
    c.batch_size = 16;
    c.probe_size = 32;
    c.max_steps = 100;
    c.eval_every = 10;
    c.optim.lr = 3e-3;
    return c;
}

} // namespace

TEST_CASE("mixing") {
    Rng rng(1);
    const Matrix z = testing::random_matrix(rng, 6, 4);
    CHECK(mix(z, 0.0) == z);
    const Matrix two = Matrix::from_rows({{1, 0}, {0, 1}});
    const Matrix m = mix(two, 0.25);
    CHECK(m == Matrix::from_rows({{0.75, 0.25}, {0.25, 0.75}}));
    const Matrix mixed = mix(z, 0.3, 2);
    for (std::size_t c = 0; c < 4; ++c) {
        double a = 0.0;
        double b = 0.0;
        for (std::size_t i = 0; i < 6; ++i) {
            a += z(i, c);
            b += mixed(i, c);
        }
        CHECK(b == doctest::Approx(a).epsilon(1e-12));
    }
    CHECK(mixed(1, 0) == doctest::Approx(0.7 * z(1, 0) + 0.3 * z(3, 0)));
    CHECK_THROWS(mix(Matrix(1, 4), 0.1));
}

TEST_CASE("mixed loss") {
    Rng rng(2);
    const Matrix a = testing::random_matrix(rng, 5, 3);
    const Matrix b = testing::random_matrix(rng, 5, 3);
    const std::vector<int> y{0, 1, 2, 1, 0};
    CHECK(mixed_loss(a, a, y) == doctest::Approx(plain_ce(a, y)).epsilon(1e-12));
    CHECK(mixed_loss(a, b, y) == doctest::Approx(0.5 * plain_ce(a, y) + 0.5 * plain_ce(b, y)).epsilon(1e-12));
    ad::Tape tape;
    const ad::Var va = tape.constant(a);
    const ad::Var vb = tape.constant(b);
    CHECK(tape.value(mixed_loss(tape, va, vb, y))(0, 0) == doctest::Approx(mixed_loss(a, b, y)).epsilon(1e-12));
}

TEST_CASE("kind names") {
    for (Kind k : {Kind::none, Kind::mix, Kind::mix_norm_control, Kind::norm_control}) {
        CHECK(parse_kind(to_string(k)) == k);
    }
    CHECK(uses_mixing(Kind::mix_norm_control));
    CHECK_FALSE(uses_mixing(Kind::norm_control));
    CHECK(uses_norm_control(Kind::norm_control));
    CHECK_THROWS(parse_kind("dropout"));
}

TEST_CASE("norm rescaling") {
    ParamSet ps{{"a", Matrix::from_rows({{3.0}}), false}, {"b", Matrix::from_rows({{0.0, 4.0}}), true}};
    CHECK(rescale_to_norm(ps, 5.0) == doctest::Approx(1.0));
    CHECK(ps[0].value(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(rescale_to_norm(ps, 10.0) == doctest::Approx(2.0));
    CHECK(ps[1].value(0, 1) == doctest::Approx(8.0));
    CHECK(std::abs(param_norm(ps) - 10.0) < 1e-12);
    NormSchedule s({5.0, 7.5});
    CHECK(apply_norm_control(ps, s, 1) == doctest::Approx(0.75));
    CHECK(std::abs(param_norm(ps) - 7.5) < 1e-12);
    CHECK_THROWS(s.at(2));
}

TEST_CASE("norm schedule") {
    NormSchedule s;
    s.record(0, 1.25);
    s.record(1, 1.5);
    CHECK_THROWS(s.record(3, 2.0));
    CHECK(s.covers(1));
    CHECK_FALSE(s.covers(2));
    std::stringstream buf;
    s.write_csv(buf);
    CHECK(NormSchedule::read_csv(buf) == s);
}

TEST_CASE("norm-controlled mixing follows the baseline norm") {
    runner::RunConfig base = tiny_config();
    base.record_norms = true;
    const runner::RunResult baseline = runner::train(base);
    REQUIRE(baseline.norms.size() == 101);
    runner::RunConfig treated = tiny_config();
    treated.intervention = Kind::mix_norm_control;
    runner::TrainHooks hooks;
    hooks.norm_schedule = &baseline.norms;
    const runner::RunResult run = runner::train(treated, hooks);
    REQUIRE(run.log.size() == baseline.log.size());
    bool differs = false;
    for (std::size_t i = 0; i < run.log.size(); ++i) {
        CHECK(std::abs(run.log[i].param_norm - baseline.log[i].param_norm) < 1e-9);
        differs = differs || run.log[i].train_loss != baseline.log[i].train_loss;
    }
    CHECK(differs);
    // Norm control without a schedule is a configuration error.
    CHECK_THROWS(runner::train(treated));
}
