#pragma once

#include "grokscope/core/matrix.hpp"
#include "grokscope/model.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace grokscope {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 1.0;
    bool decay_biases = true; // false skips tensors flagged is_bias

    bool operator==(const AdamWConfig&) const = default;
};

struct AdamWState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::int64_t t = 0;
};

// AdamW with decoupled decay:
//   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
// where the decay term uses theta before the update. No gradient clipping.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    const AdamWConfig& config() const noexcept { return config_; }
    const AdamWState& state() const noexcept { return state_; }

    // grads[i] may be empty (0x0), meaning a zero gradient for params[i].
    // Throws NumericError on a non-finite gradient, before touching anything.
    void step(ParamSet& params, std::span<const Matrix> grads);
    void step(std::span<Matrix> params, std::span<const Matrix> grads, std::span<const bool> is_bias = {});

private:
    template <typename ParamAt, typename DecayAt>
    void step_impl(std::size_t n, ParamAt param_at, std::span<const Matrix> grads, DecayAt decays);

    AdamWConfig config_;
    AdamWState state_;
};

} // namespace grokscope
