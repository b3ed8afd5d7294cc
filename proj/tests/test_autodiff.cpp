#include "doctest.h"

#include "grokscope/core/autodiff.hpp"
#include "test_support.hpp"

#include <cmath>
#include <limits>

using namespace grokscope;
using testing::check_gradients;
using testing::random_matrix;

namespace {

// Weighted sum so every output entry carries a distinct gradient.
ad::Var probe_loss(ad::Tape& t, ad::Var y, std::uint64_t seed = 99) {
    Rng rng(seed);
    const Matrix& v = t.value(y);
    const ad::Var w = t.constant(random_matrix(rng, v.rows(), v.cols()));
    // sum(y * w) through sum_squares: (y + w)^2 - y^2 - w^2 = 2 y w.
    const ad::Var a = ad::sum_squares(t, ad::add(t, y, w));
    const ad::Var b = ad::sum_squares(t, y);
    return ad::add(t, a, ad::scale(t, b, -1.0));
}

} // namespace

TEST_CASE("tape basics") {
    ad::Tape t;
    const ad::Var c = t.constant(Matrix(1, 1, 2.0));
    const ad::Var p = t.parameter(Matrix(1, 1, 3.0));
    CHECK_FALSE(t.requires_grad(c));
    CHECK(t.requires_grad(p));
    const ad::Var y = ad::sum(t, ad::scale(t, p, 4.0));
    t.backward(y);
    CHECK(t.grad(p)(0, 0) == 4.0);
    CHECK(t.grad(c).empty());
    CHECK_THROWS_AS(t.backward(y), std::logic_error);
    t.reset();
    CHECK(t.size() == 0);
}

TEST_CASE("backward needs a scalar loss") {
    ad::Tape t;
    const ad::Var p = t.parameter(Matrix(2, 2, 1.0));
    CHECK_THROWS(t.backward(p));
}

TEST_CASE("non-finite values are rejected when recorded") {
    ad::Tape t;
    const ad::Var p = t.parameter(Matrix(1, 1, 1e300));
    CHECK_THROWS_AS(ad::scale(t, p, 1e300), NumericError);
}

TEST_CASE("gradient of a shared node accumulates") {
    ad::Tape t;
    const ad::Var p = t.parameter(Matrix::from_rows({{1.5}}));
    const ad::Var y = ad::add(t, p, p);
    t.backward(ad::sum(t, ad::scale(t, y, 3.0)));
    CHECK(t.grad(p)(0, 0) == 6.0);
}

TEST_CASE("matmul, add, add_row, scale, relu gradients") {
    Rng rng(1);
    const auto r = check_gradients({random_matrix(rng, 4, 3), random_matrix(rng, 3, 5), random_matrix(rng, 1, 5)},
                                   [](ad::Tape& t, const std::vector<ad::Var>& v) {
                                       const ad::Var h = ad::add_row(t, ad::matmul(t, v[0], v[1]), v[2]);
                                       return probe_loss(t, ad::relu(t, ad::scale(t, h, 1.7)));
                                   });
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("gather_rows scatters gradients, including repeated rows") {
    Rng rng(2);
    const auto r = check_gradients({random_matrix(rng, 5, 3)}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return probe_loss(t, ad::gather_rows(t, v[0], {4, 0, 4, 2, 4}));
    });
    CHECK(r.max_rel_error < 1e-6);
    ad::Tape t;
    const ad::Var table = t.parameter(Matrix(2, 2));
    CHECK_THROWS(ad::gather_rows(t, table, {0, 2}));
}

TEST_CASE("layer_norm gradients") {
    Rng rng(3);
    std::vector<Matrix> ps{random_matrix(rng, 6, 8), random_matrix(rng, 1, 8), random_matrix(rng, 1, 8)};
    for (double& g : ps[1].values()) {
        g += 1.0;
    }
    const auto r = check_gradients(ps, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return probe_loss(t, ad::layer_norm(t, v[0], v[1], v[2]));
    });
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("layer_norm output has zero mean and unit variance per row") {
    Rng rng(4);
    ad::Tape t;
    const ad::Var x = t.constant(random_matrix(rng, 3, 16, 5.0));
    const ad::Var y = ad::layer_norm(t, x, t.constant(Matrix(1, 16, 1.0)), t.constant(Matrix(1, 16, 0.0)));
    const Matrix& out = t.value(y);
    for (std::size_t i = 0; i < 3; ++i) {
        double m = 0.0;
        double v = 0.0;
        for (double e : out.row(i)) {
            m += e;
        }
        m /= 16.0;
        for (double e : out.row(i)) {
            v += (e - m) * (e - m);
        }
        CHECK(std::abs(m) < 1e-12);
        CHECK(v / 16.0 == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("attention gradients") {
    Rng rng(5);
    const std::size_t b = 3;
    const std::size_t seq = 3;
    const std::size_t heads = 2;
    const auto r = check_gradients(
        {random_matrix(rng, b, 8), random_matrix(rng, b * seq, 8), random_matrix(rng, b * seq, 8)},
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
            const ad::Var p = ad::attention_probs(t, v[0], v[1], heads, seq);
            return probe_loss(t, ad::attention_mix(t, p, v[2], heads, seq));
        });
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("attention probabilities match a direct softmax oracle") {
    Rng rng(6);
    const Matrix q = random_matrix(rng, 2, 4);
    const Matrix k = random_matrix(rng, 6, 4);
    ad::Tape t;
    const ad::Var p = ad::attention_probs(t, t.constant(q), t.constant(k), 2, 3);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t h = 0; h < 2; ++h) {
            double scores[3];
            double z = 0.0;
            for (std::size_t s = 0; s < 3; ++s) {
                double dot = 0.0;
                for (std::size_t j = 0; j < 2; ++j) {
                    dot += q(i, h * 2 + j) * k(i * 3 + s, h * 2 + j);
                }
                scores[s] = std::exp(dot / std::sqrt(2.0));
                z += scores[s];
            }
            for (std::size_t s = 0; s < 3; ++s) {
                CHECK(t.value(p)(i, h * 3 + s) == doctest::Approx(scores[s] / z).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("cross-entropy value and gradient") {
    const Matrix logits = Matrix::from_rows({{1.0, 2.0, 3.0}, {0.5, 0.5, 0.5}});
    const std::vector<int> targets{2, 0};
    const double expected = 0.5 * (-(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0))) + std::log(3.0));
    CHECK(ad::softmax_cross_entropy(logits, targets) == doctest::Approx(expected).epsilon(1e-14));

    Rng rng(7);
    const auto r = check_gradients({random_matrix(rng, 5, 4, 3.0)}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        const std::vector<int> y{0, 3, 1, 1, 2};
        return ad::softmax_cross_entropy(t, v[0], y);
    });
    CHECK(r.max_rel_error < 1e-5);
    const std::vector<int> bad{5, 0};
    CHECK_THROWS_AS(ad::softmax_cross_entropy(logits, bad), std::out_of_range);
}

TEST_CASE("cross-entropy is stable for huge logits") {
    const Matrix logits = Matrix::from_rows({{1000.0, 0.0}});
    const std::vector<int> y{0};
    CHECK(ad::softmax_cross_entropy(logits, y) == doctest::Approx(0.0));
}

TEST_CASE("cyclic_mix value and gradient") {
    const Matrix z = Matrix::from_rows({{1, 0}, {0, 1}});
    CHECK(ad::cyclic_mix(z, 0.1) == Matrix::from_rows({{0.9, 0.1}, {0.1, 0.9}}));
    CHECK_THROWS(ad::cyclic_mix(Matrix(1, 3), 0.1));
    CHECK_THROWS(ad::cyclic_mix(Matrix(4, 3), 0.1, 4));
    Rng rng(8);
    const auto r = check_gradients({random_matrix(rng, 5, 3)}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return probe_loss(t, ad::cyclic_mix(t, v[0], 0.3, 2));
    });
    CHECK(r.max_rel_error < 1e-6);
}
