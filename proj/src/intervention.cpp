#include "grokscope/intervention.hpp"

#include "grokscope/dynamics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace grokscope::intervention {

std::string to_string(Kind kind) {
    switch (kind) {
    case Kind::none: return "none";
    case Kind::mix: return "mix";
    case Kind::mix_norm_control: return "mix+norm-control";
    case Kind::norm_control: return "norm-control";
    }
    return "none";
}

Kind parse_kind(std::string_view text) {
    for (Kind k : {Kind::none, Kind::mix, Kind::mix_norm_control, Kind::norm_control}) {
        if (text == to_string(k)) {
            return k;
        }
    }
    throw std::invalid_argument("unknown intervention '" + std::string(text) +
                                "' (expected none, mix, mix+norm-control or norm-control)");
}

bool uses_mixing(Kind kind) noexcept { return kind == Kind::mix || kind == Kind::mix_norm_control; }

bool uses_norm_control(Kind kind) noexcept {
    return kind == Kind::mix_norm_control || kind == Kind::norm_control;
}

Matrix mix(const Matrix& z, double alpha, std::size_t shift) { return ad::cyclic_mix(z, alpha, shift); }

ad::Var mix(ad::Tape& tape, ad::Var z, double alpha, std::size_t shift) {
    return ad::cyclic_mix(tape, z, alpha, shift);
}

double mixed_loss(const Matrix& logits_orig, const Matrix& logits_mixed, std::span<const int> targets) {
    if (!logits_orig.same_shape(logits_mixed)) {
        throw std::invalid_argument("mixed_loss: logits shapes " + logits_orig.shape_string() + " and " +
                                    logits_mixed.shape_string() + " differ");
    }
    return 0.5 * ad::softmax_cross_entropy(logits_orig, targets) +
           0.5 * ad::softmax_cross_entropy(logits_mixed, targets);
}

ad::Var mixed_loss(ad::Tape& tape, ad::Var logits_orig, ad::Var logits_mixed, std::span<const int> targets) {
    if (!tape.value(logits_orig).same_shape(tape.value(logits_mixed))) {
        throw std::invalid_argument("mixed_loss: logits shapes differ");
    }
    const ad::Var a = ad::softmax_cross_entropy(tape, logits_orig, targets);
    const ad::Var b = ad::softmax_cross_entropy(tape, logits_mixed, targets);
    return ad::scale(tape, ad::add(tape, a, b), 0.5);
}

NormSchedule::NormSchedule(std::vector<double> norms) : norms_(std::move(norms)) {
    for (double n : norms_) {
        if (!(n > 0.0) || !std::isfinite(n)) {
            throw std::invalid_argument("norm schedule entries must be positive and finite");
        }
    }
}

void NormSchedule::record(std::int64_t step, double norm) {
    if (step != static_cast<std::int64_t>(norms_.size())) {
        throw std::invalid_argument("norm schedule expects step " + std::to_string(norms_.size()) + ", got " +
                                    std::to_string(step));
    }
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw std::invalid_argument("norm schedule entries must be positive and finite");
    }
    norms_.push_back(norm);
}

double NormSchedule::at(std::int64_t step) const {
    if (step < 0 || static_cast<std::size_t>(step) >= norms_.size()) {
        throw std::out_of_range("norm schedule has no entry for step " + std::to_string(step) + " (length " +
                                std::to_string(norms_.size()) + ")");
    }
    return norms_[static_cast<std::size_t>(step)];
}

bool NormSchedule::covers(std::int64_t last_step) const noexcept {
    return last_step >= 0 && static_cast<std::size_t>(last_step) < norms_.size();
}

void NormSchedule::write_csv(std::ostream& out) const {
    out << "step,norm\n";
    for (std::size_t i = 0; i < norms_.size(); ++i) {
        out << i << ',' << dynamics::format_double(norms_[i]) << '\n';
    }
}

NormSchedule NormSchedule::read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("step,norm", 0) != 0) {
        throw std::runtime_error("norm schedule: missing 'step,norm' header");
    }
    NormSchedule s;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw std::runtime_error("norm schedule: malformed line '" + line + "'");
        }
        std::int64_t step = 0;
        double norm = 0.0;
        const char* first = line.data();
        const char* mid = first + comma;
        const char* last = first + line.size();
        if (std::from_chars(first, mid, step).ec != std::errc() ||
            std::from_chars(mid + 1, last, norm).ec != std::errc()) {
            throw std::runtime_error("norm schedule: malformed line '" + line + "'");
        }
        s.record(step, norm);
    }
    return s;
}

NormSchedule NormSchedule::read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open norm schedule '" + path + "'");
    }
    return read_csv(in);
}

double rescale_to_norm(ParamSet& params, double target) {
    const double current = param_norm(params);
    if (!(current > 0.0)) {
        throw std::domain_error("cannot rescale parameters with zero norm");
    }
    const double factor = target / current;
    for (ParamTensor& p : params) {
        p.value *= factor;
    }
    return factor;
}

double apply_norm_control(ParamSet& params, const NormSchedule& schedule, std::int64_t step) {
    return rescale_to_norm(params, schedule.at(step));
}

} // namespace grokscope::intervention
