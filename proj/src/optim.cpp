#include "grokscope/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace grokscope {

template <typename ParamAt, typename DecayAt>
void AdamW::step_impl(std::size_t n, ParamAt param_at, std::span<const Matrix> grads, DecayAt decays) {
    if (n != grads.size()) {
        throw std::invalid_argument("AdamW: " + std::to_string(n) + " parameters but " +
                                    std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Matrix& p = param_at(i);
        if (!grads[i].empty() && !grads[i].same_shape(p)) {
            throw std::invalid_argument("AdamW: gradient " + std::to_string(i) + " is " +
                                        grads[i].shape_string() + ", parameter is " + p.shape_string());
        }
        if (!grads[i].all_finite()) {
            throw NumericError("AdamW: non-finite gradient for parameter " + std::to_string(i));
        }
    }
    if (state_.m.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
            state_.m.emplace_back(param_at(i).rows(), param_at(i).cols());
            state_.v.emplace_back(param_at(i).rows(), param_at(i).cols());
        }
    } else if (state_.m.size() != n) {
        throw std::invalid_argument("AdamW: parameter count changed between steps");
    }

    ++state_.t;
    const AdamWConfig& c = config_;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state_.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state_.t));
    for (std::size_t i = 0; i < n; ++i) {
        const double shrink = decays(i) ? 1.0 - c.lr * c.weight_decay : 1.0;
        std::span<double> theta = param_at(i).values();
        std::span<double> m = state_.m[i].values();
        std::span<double> v = state_.v[i].values();
        const double* g = grads[i].empty() ? nullptr : grads[i].data();
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double gk = g ? g[k] : 0.0;
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            theta[k] = theta[k] * shrink - c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

void AdamW::step(ParamSet& params, std::span<const Matrix> grads) {
    step_impl(
        params.size(), [&](std::size_t i) -> Matrix& { return params[i].value; }, grads,
        [&](std::size_t i) { return config_.decay_biases || !params[i].is_bias; });
}

void AdamW::step(std::span<Matrix> params, std::span<const Matrix> grads, std::span<const bool> is_bias) {
    if (!is_bias.empty() && is_bias.size() != params.size()) {
        throw std::invalid_argument("AdamW: bias flags do not match parameter count");
    }
    step_impl(
        params.size(), [&](std::size_t i) -> Matrix& { return params[i]; }, grads,
        [&](std::size_t i) { return config_.decay_biases || is_bias.empty() || !is_bias[i]; });
}

} // namespace grokscope
