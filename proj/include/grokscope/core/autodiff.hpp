#pragma once

#include "grokscope/core/matrix.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

namespace grokscope::ad {

// Handle to a node on a Tape.
struct Var {
    std::size_t id = std::numeric_limits<std::size_t>::max();
    bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

// Reverse-mode differentiation tape. Nodes are appended in evaluation order,
// which is a topological order, so backward() walks the vector from the loss
// down and visits each node once.
//
// A tape is single-use: backward() may run once, after which reset() is
// required before recording a new graph.
class Tape {
public:
    // Propagates node `self`'s gradient into its parents.
    using Backprop = std::function<void(Tape&, std::size_t self)>;

    Var constant(Matrix value);
    Var parameter(Matrix value);

    const Matrix& value(Var v) const;
    // Gradient of the loss w.r.t. v. Zero-shaped when v did not influence the loss.
    const Matrix& grad(Var v) const;
    bool requires_grad(Var v) const;

    void backward(Var loss);
    void reset();
    std::size_t size() const noexcept { return nodes_.size(); }
    bool backward_done() const noexcept { return backward_done_; }

    // Op-author interface. Throws NumericError when `value` holds NaN/inf.
    Var record(const char* op, Matrix value, std::initializer_list<Var> parents, Backprop backprop);
    // Gradient accumulator of `v`, zero-allocated on first access.
    Matrix& grad_accumulator(Var v);
    std::span<const std::size_t> parents(Var v) const;

private:
    struct Node {
        const char* op;
        Matrix value;
        Matrix grad;
        std::vector<std::size_t> parents;
        Backprop backprop;
        bool requires_grad;
    };

    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// ---- ops used by the models -------------------------------------------------

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
// x [n x m] + bias [1 x m] broadcast over rows.
Var add_row(Tape& t, Var x, Var bias);
Var scale(Tape& t, Var x, double factor);
Var relu(Tape& t, Var x);
Var sum(Tape& t, Var x);
Var sum_squares(Tape& t, Var x);

// out.row(i) = table.row(indices[i]); gradients scatter-add back.
Var gather_rows(Tape& t, Var table, std::vector<std::size_t> indices);

// Row-wise layer normalisation with learned gain/bias [1 x m].
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);

// Single-query multi-head attention.
//   query [B x D]: one query per example
//   keys  [(B*seq) x D]: rows i*seq .. i*seq+seq-1 belong to example i
// Returns softmax probabilities [B x (heads*seq)], head-major within a row.
Var attention_probs(Tape& t, Var query, Var keys, std::size_t heads, std::size_t seq);
// Weighted sum of values [(B*seq) x D] using probabilities from attention_probs.
Var attention_mix(Tape& t, Var probs, Var values, std::size_t heads, std::size_t seq);

// out.row(i) = (1 - alpha) * z.row(i) + alpha * z.row((i + shift) mod B). Requires B >= 2.
Var cyclic_mix(Tape& t, Var z, double alpha, std::size_t shift = 1);

// Mean over rows of -log softmax(logits)[target]. Returns 1x1.
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> targets);

// Plain-matrix helpers shared with non-tape callers.
Matrix cyclic_mix(const Matrix& z, double alpha, std::size_t shift = 1);
double softmax_cross_entropy(const Matrix& logits, std::span<const int> targets);

} // namespace grokscope::ad
