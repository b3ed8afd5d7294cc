#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace grokscope {

// Counter-based 64-bit generator. Each value is a SplitMix64 finalisation of
// (key + counter * golden-gamma), so a stream is fully described by its key.
// Independent substreams are keyed by (seed, label), e.g. "split", "init",
// "batch-order", "probe-train".
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept;

    static Rng stream(std::uint64_t seed, std::string_view label) noexcept;

    std::uint64_t next_u64() noexcept;

    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;

    // Standard normal via Box-Muller (one output per two uniforms).
    double normal() noexcept;

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept;

    template <class T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // k distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

} // namespace grokscope
