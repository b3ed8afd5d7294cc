#pragma once

#include "grokscope/core/autodiff.hpp"
#include "grokscope/core/matrix.hpp"
#include "grokscope/core/rng.hpp"
#include "grokscope/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testing {

inline grokscope::Matrix random_matrix(grokscope::Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    grokscope::Matrix m(rows, cols);
    for (double& v : m.values()) {
        v = scale * rng.normal();
    }
    return m;
}

// Central-difference gradient check. `loss_of` builds a scalar loss on the
// tape from the given parameter handles.
using LossBuilder = std::function<grokscope::ad::Var(grokscope::ad::Tape&, const std::vector<grokscope::ad::Var>&)>;

struct GradCheck {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps entries
// whose true gradient is ~0 from dividing noise by noise.
inline GradCheck check_gradients(std::vector<grokscope::Matrix> params, const LossBuilder& loss_of,
                                 double h = 1e-6, double floor = 1e-4) {
    using namespace grokscope;
    auto evaluate = [&](const std::vector<Matrix>& ps) {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const Matrix& p : ps) {
            vars.push_back(tape.constant(p));
        }
        return tape.value(loss_of(tape, vars))(0, 0);
    };
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Matrix& p : params) {
        vars.push_back(tape.parameter(p));
    }
    tape.backward(loss_of(tape, vars));
    std::vector<Matrix> grads;
    for (const ad::Var& v : vars) {
        grads.push_back(tape.grad(v));
    }
    GradCheck out;
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            const double saved = params[k].data()[i];
            params[k].data()[i] = saved + h;
            const double up = evaluate(params);
            params[k].data()[i] = saved - h;
            const double down = evaluate(params);
            params[k].data()[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grads[k].empty() ? 0.0 : grads[k].data()[i];
            const double abs_err = std::abs(analytic - numeric);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
            out.max_abs_error = std::max(out.max_abs_error, abs_err);
            out.max_rel_error = std::max(out.max_rel_error, abs_err / denom);
            ++out.checked;
        }
    }
    return out;
}

// Gradient check of a model's cross-entropy loss over all its parameters.
inline GradCheck check_model_gradients(const grokscope::Model& model, std::span<const grokscope::Example> batch,
                                       double mix_alpha = 0.0) {
    using namespace grokscope;
    std::vector<Matrix> values;
    for (const ParamTensor& p : model.params()) {
        values.push_back(p.value);
    }
    std::vector<int> targets;
    for (const Example& e : batch) {
        targets.push_back(e.label);
    }
    const ModelSpec spec = model.spec();
    const ParamSet layout = model.params();
    return check_gradients(values, [&](ad::Tape& tape, const std::vector<ad::Var>& vars) {
        const ForwardGraph g = build_with_vars(tape, layout, vars, spec, batch);
        if (mix_alpha == 0.0) {
            return ad::softmax_cross_entropy(tape, g.logits, targets);
        }
        const ad::Var mixed = ad::cyclic_mix(tape, g.z, mix_alpha);
        const ad::Var mixed_logits = ad::matmul(tape, mixed, g.params.back());
        return ad::scale(tape,
                         ad::add(tape, ad::softmax_cross_entropy(tape, g.logits, targets),
                                 ad::softmax_cross_entropy(tape, mixed_logits, targets)),
                         0.5);
    });
}

} // namespace testing
