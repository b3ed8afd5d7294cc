#include "grokscope/tasks.hpp"

#include "grokscope/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace grokscope {

std::string to_string(TaskKind kind) {
    switch (kind) {
    case TaskKind::mod_add: return "mod-add";
    case TaskKind::mod_mul: return "mod-mul";
    case TaskKind::mod_sub: return "mod-sub";
    case TaskKind::s5_compose: return "s5-compose";
    }
    return "unknown";
}

TaskKind parse_task_kind(std::string_view text) {
    for (TaskKind k : {TaskKind::mod_add, TaskKind::mod_mul, TaskKind::mod_sub, TaskKind::s5_compose}) {
        if (text == to_string(k)) {
            return k;
        }
    }
    throw std::invalid_argument("unknown task kind '" + std::string(text) +
                                "' (expected mod-add, mod-mul, mod-sub or s5-compose)");
}

int TaskSpec::num_classes() const noexcept {
    return is_modular() ? modulus : kS5Order;
}

std::size_t TaskSpec::total_pairs() const noexcept {
    const auto n = static_cast<std::size_t>(num_classes());
    return n * n;
}

bool is_prime(int n) noexcept {
    if (n < 2) {
        return false;
    }
    for (int d = 2; d * d <= n; ++d) {
        if (n % d == 0) {
            return false;
        }
    }
    return true;
}

void validate_task(const TaskSpec& task) {
    if (!(task.train_fraction > 0.0 && task.train_fraction < 1.0)) {
        throw std::invalid_argument("train_fraction must lie in (0, 1), got " +
                                    std::to_string(task.train_fraction));
    }
    if (task.is_modular() && !is_prime(task.modulus)) {
        throw std::invalid_argument("modulus must be prime, got " + std::to_string(task.modulus));
    }
}

std::size_t train_size(const TaskSpec& task) {
    // The small epsilon keeps products like 0.8 * 25 from flooring to 19.
    return static_cast<std::size_t>(std::floor(task.train_fraction * static_cast<double>(task.total_pairs()) + 1e-9));
}

namespace {

int apply(const TaskSpec& task, int a, int b) {
    const int p = task.modulus;
    switch (task.kind) {
    case TaskKind::mod_add: return (a + b) % p;
    case TaskKind::mod_mul: return static_cast<int>((static_cast<long long>(a) * b) % p);
    case TaskKind::mod_sub: return ((a - b) % p + p) % p;
    case TaskKind::s5_compose: return s5_compose(a, b);
    }
    return 0;
}

} // namespace

std::vector<Example> enumerate_all(const TaskSpec& task) {
    validate_task(task);
    const int n = task.num_classes();
    const int eq = task.eq_token();
    std::vector<Example> out;
    out.reserve(task.total_pairs());
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            out.push_back(Example{{a, b, eq}, apply(task, a, b)});
        }
    }
    return out;
}

Dataset generate(const TaskSpec& task, std::uint64_t seed) {
    std::vector<Example> all = enumerate_all(task);
    Rng rng = Rng::stream(seed, "split");
    rng.shuffle(std::span<Example>(all));
    const std::size_t n_train = train_size(task);
    Dataset d;
    d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    d.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
    return d;
}

// ---- S5 ---------------------------------------------------------------------

namespace {

struct S5Table {
    std::array<Permutation, kS5Order> elements{};
    std::array<std::array<int, kS5Order>, kS5Order> compose{};
    std::array<int, kS5Order> inverse{};

    S5Table() {
        Permutation p{0, 1, 2, 3, 4};
        int i = 0;
        do {
            elements[static_cast<std::size_t>(i++)] = p;
        } while (std::next_permutation(p.begin(), p.end()));
        for (int a = 0; a < kS5Order; ++a) {
            for (int b = 0; b < kS5Order; ++b) {
                const Permutation& s1 = elements[static_cast<std::size_t>(a)];
                const Permutation& s2 = elements[static_cast<std::size_t>(b)];
                Permutation c{};
                for (std::size_t k = 0; k < 5; ++k) {
                    c[k] = s1[static_cast<std::size_t>(s2[k])];
                }
                compose[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = rank(c);
            }
        }
        for (int a = 0; a < kS5Order; ++a) {
            for (int b = 0; b < kS5Order; ++b) {
                if (compose[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] == 0) {
                    inverse[static_cast<std::size_t>(a)] = b;
                }
            }
        }
    }

    static int rank(const Permutation& perm) {
        // Lehmer code.
        static constexpr std::array<int, 5> factorial{24, 6, 2, 1, 1};
        int r = 0;
        for (std::size_t i = 0; i < 5; ++i) {
            int smaller = 0;
            for (std::size_t j = i + 1; j < 5; ++j) {
                if (perm[j] < perm[i]) {
                    ++smaller;
                }
            }
            r += smaller * factorial[i];
        }
        return r;
    }
};

const S5Table& s5_table() {
    static const S5Table table;
    return table;
}

void check_s5_index(int index) {
    if (index < 0 || index >= kS5Order) {
        throw std::out_of_range("S5 index " + std::to_string(index) + " outside [0, 120)");
    }
}

} // namespace

Permutation s5_element(int index) {
    check_s5_index(index);
    return s5_table().elements[static_cast<std::size_t>(index)];
}

int s5_index(const Permutation& perm) {
    std::array<bool, 5> seen{};
    for (int v : perm) {
        if (v < 0 || v > 4 || seen[static_cast<std::size_t>(v)]) {
            throw std::invalid_argument("not a permutation of {0..4}");
        }
        seen[static_cast<std::size_t>(v)] = true;
    }
    return S5Table::rank(perm);
}

int s5_compose(int sigma1, int sigma2) {
    check_s5_index(sigma1);
    check_s5_index(sigma2);
    return s5_table().compose[static_cast<std::size_t>(sigma1)][static_cast<std::size_t>(sigma2)];
}

int s5_inverse(int sigma) {
    check_s5_index(sigma);
    return s5_table().inverse[static_cast<std::size_t>(sigma)];
}

// ---- probes -----------------------------------------------------------------

std::string to_string(ProbeSource source) {
    return source == ProbeSource::train ? "train" : "test";
}

ProbeSource parse_probe_source(std::string_view text) {
    if (text == "train") {
        return ProbeSource::train;
    }
    if (text == "test") {
        return ProbeSource::test;
    }
    throw std::invalid_argument("unknown probe source '" + std::string(text) + "'");
}

ProbeSet make_probe(const Dataset& data, ProbeSource source, std::uint64_t seed, std::size_t size) {
    const std::vector<Example>& pool = source == ProbeSource::train ? data.train : data.test;
    if (pool.size() < size) {
        throw std::invalid_argument("probe needs " + std::to_string(size) + " examples but the " +
                                    to_string(source) + " split has " + std::to_string(pool.size()));
    }
    Rng rng = Rng::stream(seed, "probe-" + to_string(source));
    ProbeSet probe;
    probe.source = source;
    probe.examples.reserve(size);
    for (std::size_t idx : rng.sample_without_replacement(pool.size(), size)) {
        probe.examples.push_back(pool[idx]);
    }
    return probe;
}

void write_examples_csv(std::ostream& out, std::span<const Example> examples) {
    out << "a,b,label\n";
    for (const Example& e : examples) {
        out << e.tokens[0] << ',' << e.tokens[1] << ',' << e.label << '\n';
    }
}

} // namespace grokscope
