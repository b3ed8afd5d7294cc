#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace grokscope {

enum class TaskKind { mod_add, mod_mul, mod_sub, s5_compose };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

struct TaskSpec {
    TaskKind kind = TaskKind::mod_add;
    int modulus = 97; // ignored for s5_compose
    double train_fraction = 0.2;

    bool is_modular() const noexcept { return kind != TaskKind::s5_compose; }
    int num_classes() const noexcept;
    // Operands plus the dedicated '=' token.
    int vocab_size() const noexcept { return num_classes() + 1; }
    int eq_token() const noexcept { return num_classes(); }
    std::size_t total_pairs() const noexcept;

    bool operator==(const TaskSpec&) const = default;
};

struct Example {
    std::array<int, 3> tokens{}; // [a, b, EQ]
    int label = 0;

    bool operator==(const Example&) const = default;
};

struct Dataset {
    std::vector<Example> train;
    std::vector<Example> test;
};

bool is_prime(int n) noexcept;

// Throws std::invalid_argument for a non-prime modulus or a fraction outside (0, 1).
void validate_task(const TaskSpec& task);
// floor(train_fraction * total).
std::size_t train_size(const TaskSpec& task);

// Every ordered pair (a, b) in row-major order of (a, b).
std::vector<Example> enumerate_all(const TaskSpec& task);

// Train/test partition drawn from the (seed, "split") substream.
// |train| = floor(train_fraction * total).
Dataset generate(const TaskSpec& task, std::uint64_t seed);

// ---- S5 ---------------------------------------------------------------------
// Elements are indexed by the lexicographic rank (0..119) of the one-line word
// (perm[0], ..., perm[4]); index 0 is the identity.

using Permutation = std::array<int, 5>;
inline constexpr int kS5Order = 120;

Permutation s5_element(int index);
int s5_index(const Permutation& perm);
// Index of sigma1 o sigma2: apply sigma2 first, then sigma1.
int s5_compose(int sigma1, int sigma2);
int s5_inverse(int sigma);

// ---- probes -----------------------------------------------------------------

enum class ProbeSource { train, test };

std::string to_string(ProbeSource source);
ProbeSource parse_probe_source(std::string_view text);

struct ProbeSet {
    std::vector<Example> examples;
    ProbeSource source = ProbeSource::train;
};

inline constexpr std::size_t kDefaultProbeSize = 512;

// Draws `size` examples without replacement via the (seed, "probe-<source>")
// substream. Throws if the source split is smaller than `size`.
ProbeSet make_probe(const Dataset& data, ProbeSource source, std::uint64_t seed,
                    std::size_t size = kDefaultProbeSize);

// a,b,label rows with header.
void write_examples_csv(std::ostream& out, std::span<const Example> examples);

} // namespace grokscope
