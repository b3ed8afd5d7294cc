#pragma once

#include "grokscope/core/autodiff.hpp"
#include "grokscope/core/matrix.hpp"
#include "grokscope/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace grokscope::intervention {

enum class Kind {
    none,
    mix,              // representation mixing
    mix_norm_control, // mixing plus rescaling to a baseline norm schedule
    norm_control,     // rescaling only
};

std::string to_string(Kind kind);
Kind parse_kind(std::string_view text);
bool uses_mixing(Kind kind) noexcept;
bool uses_norm_control(Kind kind) noexcept;

inline constexpr double kDefaultAlpha = 0.1;

// z~_i = (1 - alpha) z_i + alpha z_{(i + shift) mod B}. Needs B >= 2.
Matrix mix(const Matrix& z, double alpha, std::size_t shift = 1);
ad::Var mix(ad::Tape& tape, ad::Var z, double alpha, std::size_t shift = 1);

// 0.5 * CE(logits_orig, y) + 0.5 * CE(logits_mixed, y).
double mixed_loss(const Matrix& logits_orig, const Matrix& logits_mixed, std::span<const int> targets);
ad::Var mixed_loss(ad::Tape& tape, ad::Var logits_orig, ad::Var logits_mixed, std::span<const int> targets);

// Global parameter norm per optimizer step; entry s is the norm after step s
// (entry 0 is the initial norm).
class NormSchedule {
public:
    NormSchedule() = default;
    explicit NormSchedule(std::vector<double> norms);

    void record(std::int64_t step, double norm);
    double at(std::int64_t step) const;
    std::size_t size() const noexcept { return norms_.size(); }
    bool covers(std::int64_t last_step) const noexcept;
    const std::vector<double>& norms() const noexcept { return norms_; }

    void write_csv(std::ostream& out) const;
    static NormSchedule read_csv(std::istream& in);
    static NormSchedule read_file(const std::string& path);

    bool operator==(const NormSchedule&) const = default;

private:
    std::vector<double> norms_;
};

// Rescales every tensor by target / current; returns the factor applied.
double rescale_to_norm(ParamSet& params, double target);
double apply_norm_control(ParamSet& params, const NormSchedule& schedule, std::int64_t step);

} // namespace grokscope::intervention
