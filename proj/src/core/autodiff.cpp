#include "grokscope/core/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace grokscope::ad {

Var Tape::constant(Matrix value) {
    return record("constant", std::move(value), {}, nullptr);
}

Var Tape::parameter(Matrix value) {
    Var v = record("parameter", std::move(value), {}, nullptr);
    nodes_[v.id].requires_grad = true;
    return v;
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) {
        throw std::out_of_range("Tape: invalid variable handle");
    }
    return nodes_[v.id];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }
const Matrix& Tape::grad(Var v) const { return node(v).grad; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
std::span<const std::size_t> Tape::parents(Var v) const { return node(v).parents; }

Var Tape::record(const char* op, Matrix value, std::initializer_list<Var> parents,
                 Backprop backprop) {
    if (backward_done_) {
        throw std::logic_error("Tape: cannot record after backward(); call reset() first");
    }
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite value produced by ") + op + " (" +
                           value.shape_string() + ")");
    }
    Node n{op, std::move(value), Matrix{}, {}, std::move(backprop), false};
    n.parents.reserve(parents.size());
    for (Var p : parents) {
        const Node& parent = node(p);
        n.parents.push_back(p.id);
        n.requires_grad = n.requires_grad || parent.requires_grad;
    }
    if (!n.requires_grad) {
        n.backprop = nullptr;
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Matrix& Tape::grad_accumulator(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty() && !n.value.empty()) {
        n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    if (backward_done_) {
        throw std::logic_error("Tape: backward() already ran; call reset() before reusing the tape");
    }
    const Node& l = node(loss);
    if (l.value.rows() != 1 || l.value.cols() != 1) {
        throw std::invalid_argument("Tape: backward() needs a scalar loss, got " +
                                    l.value.shape_string());
    }
    backward_done_ = true;
    grad_accumulator(loss)(0, 0) = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty() || !n.backprop) {
            continue;
        }
        n.backprop(*this, i);
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

// ---- ops ---------------------------------------------------------------------

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) {
        throw std::invalid_argument(message);
    }
}

} // namespace

Var matmul(Tape& t, Var a, Var b) {
    Matrix out = grokscope::matmul(t.value(a), t.value(b));
    return t.record("matmul", std::move(out), {a, b}, [a, b](Tape& tape, std::size_t self) {
        const Matrix& g = tape.grad(Var{self});
        if (tape.requires_grad(a)) {
            gemm(g, false, tape.value(b), true, tape.grad_accumulator(a), 1.0);
        }
        if (tape.requires_grad(b)) {
            gemm(tape.value(a), true, g, false, tape.grad_accumulator(b), 1.0);
        }
    });
}

Var add(Tape& t, Var a, Var b) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    require(av.same_shape(bv), "add: shape mismatch " + av.shape_string() + " vs " + bv.shape_string());
    return t.record("add", av + bv, {a, b}, [a, b](Tape& tape, std::size_t self) {
        const Matrix& g = tape.grad(Var{self});
        if (tape.requires_grad(a)) {
            tape.grad_accumulator(a) += g;
        }
        if (tape.requires_grad(b)) {
            tape.grad_accumulator(b) += g;
        }
    });
}

Var add_row(Tape& t, Var x, Var bias) {
    const Matrix& xv = t.value(x);
    const Matrix& bv = t.value(bias);
    require(bv.rows() == 1 && bv.cols() == xv.cols(),
            "add_row: bias " + bv.shape_string() + " does not broadcast over " + xv.shape_string());
    Matrix out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] += bv(0, c);
        }
    }
    return t.record("add_row", std::move(out), {x, bias}, [x, bias](Tape& tape, std::size_t self) {
        const Matrix& g = tape.grad(Var{self});
        if (tape.requires_grad(x)) {
            tape.grad_accumulator(x) += g;
        }
        if (tape.requires_grad(bias)) {
            Matrix& gb = tape.grad_accumulator(bias);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                const auto row = g.row(r);
                for (std::size_t c = 0; c < row.size(); ++c) {
                    gb(0, c) += row[c];
                }
            }
        }
    });
}

Var scale(Tape& t, Var x, double factor) {
    return t.record("scale", t.value(x) * factor, {x}, [x, factor](Tape& tape, std::size_t self) {
        const Matrix& g = tape.grad(Var{self});
        Matrix& gx = tape.grad_accumulator(x);
        const auto gs = g.values();
        auto out = gx.values();
        for (std::size_t i = 0; i < gs.size(); ++i) {
            out[i] += factor * gs[i];
        }
    });
}

Var relu(Tape& t, Var x) {
    Matrix out = t.value(x);
    for (double& v : out.values()) {
        v = v > 0.0 ? v : 0.0;
    }
    return t.record("relu", std::move(out), {x}, [x](Tape& tape, std::size_t self) {
        const auto g = tape.grad(Var{self}).values();
        const auto in = tape.value(x).values();
        auto out = tape.grad_accumulator(x).values();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (in[i] > 0.0) {
                out[i] += g[i];
            }
        }
    });
}

Var sum(Tape& t, Var x) {
    Matrix out(1, 1, t.value(x).sum());
    return t.record("sum", std::move(out), {x}, [x](Tape& tape, std::size_t self) {
        const double g = tape.grad(Var{self})(0, 0);
        for (double& v : tape.grad_accumulator(x).values()) {
            v += g;
        }
    });
}

Var sum_squares(Tape& t, Var x) {
    Matrix out(1, 1, t.value(x).sum_squares());
    return t.record("sum_squares", std::move(out), {x}, [x](Tape& tape, std::size_t self) {
        const double g = tape.grad(Var{self})(0, 0);
        const auto in = tape.value(x).values();
        auto out = tape.grad_accumulator(x).values();
        for (std::size_t i = 0; i < in.size(); ++i) {
            out[i] += 2.0 * g * in[i];
        }
    });
}

Var gather_rows(Tape& t, Var table, std::vector<std::size_t> indices) {
    const Matrix& tv = t.value(table);
    Matrix out(indices.size(), tv.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] < tv.rows(), "gather_rows: index " + std::to_string(indices[i]) +
                                            " out of range for " + tv.shape_string());
        std::copy_n(tv.row(indices[i]).data(), tv.cols(), out.row(i).data());
    }
    return t.record("gather_rows", std::move(out), {table},
                    [table, idx = std::move(indices)](Tape& tape, std::size_t self) {
                        const Matrix& g = tape.grad(Var{self});
                        Matrix& gt = tape.grad_accumulator(table);
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                            const auto src = g.row(i);
                            auto dst = gt.row(idx[i]);
                            for (std::size_t c = 0; c < src.size(); ++c) {
                                dst[c] += src[c];
                            }
                        }
                    });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
    const Matrix& xv = t.value(x);
    const Matrix& gv = t.value(gain);
    const Matrix& bv = t.value(bias);
    const std::size_t n = xv.rows();
    const std::size_t m = xv.cols();
    require(gv.rows() == 1 && gv.cols() == m && bv.same_shape(gv),
            "layer_norm: gain/bias must be 1x" + std::to_string(m));
    Matrix normalized(n, m);
    std::vector<double> inv_std(n);
    Matrix out(n, m);
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = xv.row(r);
        double mean = 0.0;
        for (double v : row) {
            mean += v;
        }
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (double v : row) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(m);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < m; ++c) {
            const double xh = (row[c] - mean) * inv_std[r];
            normalized(r, c) = xh;
            out(r, c) = xh * gv(0, c) + bv(0, c);
        }
    }
    return t.record(
        "layer_norm", std::move(out), {x, gain, bias},
        [x, gain, bias, xhat = std::move(normalized), inv = std::move(inv_std)](Tape& tape,
                                                                                  std::size_t self) {
            const Matrix& g = tape.grad(Var{self});
            const Matrix& gv = tape.value(gain);
            const std::size_t rows = g.rows();
            const std::size_t cols = g.cols();
            if (tape.requires_grad(gain) || tape.requires_grad(bias)) {
                Matrix& gg = tape.grad_accumulator(gain);
                Matrix& gb = tape.grad_accumulator(bias);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        gg(0, c) += g(r, c) * xhat(r, c);
                        gb(0, c) += g(r, c);
                    }
                }
            }
            if (!tape.requires_grad(x)) {
                return;
            }
            Matrix& gx = tape.grad_accumulator(x);
            std::vector<double> dxhat(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_d = 0.0;
                double mean_dx = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    dxhat[c] = g(r, c) * gv(0, c);
                    mean_d += dxhat[c];
                    mean_dx += dxhat[c] * xhat(r, c);
                }
                mean_d /= static_cast<double>(cols);
                mean_dx /= static_cast<double>(cols);
                for (std::size_t c = 0; c < cols; ++c) {
                    gx(r, c) += inv[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
                }
            }
        });
}

Var attention_probs(Tape& t, Var query, Var keys, std::size_t heads, std::size_t seq) {
    const Matrix& q = t.value(query);
    const Matrix& k = t.value(keys);
    const std::size_t batch = q.rows();
    const std::size_t dim = q.cols();
    require(heads > 0 && dim % heads == 0, "attention_probs: model width " + std::to_string(dim) +
                                               " not divisible by " + std::to_string(heads) + " heads");
    require(k.rows() == batch * seq && k.cols() == dim,
            "attention_probs: keys " + k.shape_string() + " do not match queries " + q.shape_string());
    const std::size_t hd = dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    Matrix probs(batch, heads * seq);
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* p = &probs(i, h * seq);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t s = 0; s < seq; ++s) {
                const double* qr = q.row(i).data() + h * hd;
                const double* kr = k.row(i * seq + s).data() + h * hd;
                double dot = 0.0;
                for (std::size_t j = 0; j < hd; ++j) {
                    dot += qr[j] * kr[j];
                }
                p[s] = dot * inv_sqrt;
                mx = std::max(mx, p[s]);
            }
            double z = 0.0;
            for (std::size_t s = 0; s < seq; ++s) {
                p[s] = std::exp(p[s] - mx);
                z += p[s];
            }
            for (std::size_t s = 0; s < seq; ++s) {
                p[s] /= z;
            }
        }
    }
    return t.record("attention_probs", std::move(probs), {query, keys},
                    [query, keys, heads, seq, hd, inv_sqrt](Tape& tape, std::size_t self) {
                        const Matrix& g = tape.grad(Var{self});
                        const Matrix& p = tape.value(Var{self});
                        const Matrix& q = tape.value(query);
                        const Matrix& k = tape.value(keys);
                        const bool want_q = tape.requires_grad(query);
                        const bool want_k = tape.requires_grad(keys);
                        Matrix* gq = want_q ? &tape.grad_accumulator(query) : nullptr;
                        Matrix* gk = want_k ? &tape.grad_accumulator(keys) : nullptr;
                        std::vector<double> dscore(seq);
                        for (std::size_t i = 0; i < q.rows(); ++i) {
                            for (std::size_t h = 0; h < heads; ++h) {
                                double dot = 0.0;
                                for (std::size_t s = 0; s < seq; ++s) {
                                    dot += p(i, h * seq + s) * g(i, h * seq + s);
                                }
                                for (std::size_t s = 0; s < seq; ++s) {
                                    dscore[s] = p(i, h * seq + s) * (g(i, h * seq + s) - dot) * inv_sqrt;
                                }
                                for (std::size_t s = 0; s < seq; ++s) {
                                    const std::size_t kr = i * seq + s;
                                    for (std::size_t j = 0; j < hd; ++j) {
                                        const std::size_t c = h * hd + j;
                                        if (gq) {
                                            (*gq)(i, c) += dscore[s] * k(kr, c);
                                        }
                                        if (gk) {
                                            (*gk)(kr, c) += dscore[s] * q(i, c);
                                        }
                                    }
                                }
                            }
                        }
                    });
}

Var attention_mix(Tape& t, Var probs, Var values, std::size_t heads, std::size_t seq) {
    const Matrix& p = t.value(probs);
    const Matrix& v = t.value(values);
    const std::size_t batch = p.rows();
    require(p.cols() == heads * seq, "attention_mix: probabilities " + p.shape_string() +
                                         " do not match heads*seq");
    require(v.rows() == batch * seq && v.cols() % heads == 0,
            "attention_mix: values " + v.shape_string() + " do not match batch " + std::to_string(batch));
    const std::size_t dim = v.cols();
    const std::size_t hd = dim / heads;
    Matrix out(batch, dim);
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t s = 0; s < seq; ++s) {
                const double w = p(i, h * seq + s);
                const double* vr = v.row(i * seq + s).data() + h * hd;
                double* o = &out(i, h * hd);
                for (std::size_t j = 0; j < hd; ++j) {
                    o[j] += w * vr[j];
                }
            }
        }
    }
    return t.record("attention_mix", std::move(out), {probs, values},
                    [probs, values, heads, seq, hd](Tape& tape, std::size_t self) {
                        const Matrix& g = tape.grad(Var{self});
                        const Matrix& p = tape.value(probs);
                        const Matrix& v = tape.value(values);
                        const bool want_p = tape.requires_grad(probs);
                        const bool want_v = tape.requires_grad(values);
                        Matrix* gp = want_p ? &tape.grad_accumulator(probs) : nullptr;
                        Matrix* gv = want_v ? &tape.grad_accumulator(values) : nullptr;
                        for (std::size_t i = 0; i < p.rows(); ++i) {
                            for (std::size_t h = 0; h < heads; ++h) {
                                for (std::size_t s = 0; s < seq; ++s) {
                                    const std::size_t vr = i * seq + s;
                                    const double w = p(i, h * seq + s);
                                    double dw = 0.0;
                                    for (std::size_t j = 0; j < hd; ++j) {
                                        const std::size_t c = h * hd + j;
                                        dw += g(i, c) * v(vr, c);
                                        if (gv) {
                                            (*gv)(vr, c) += w * g(i, c);
                                        }
                                    }
                                    if (gp) {
                                        (*gp)(i, h * seq + s) += dw;
                                    }
                                }
                            }
                        }
                    });
}

Matrix cyclic_mix(const Matrix& z, double alpha, std::size_t shift) {
    const std::size_t b = z.rows();
    if (b < 2) {
        throw std::invalid_argument("cyclic_mix: batch of " + std::to_string(b) +
                                    " rows has no derangement; need at least 2");
    }
    if (shift % b == 0) {
        throw std::invalid_argument("cyclic_mix: shift " + std::to_string(shift) +
                                    " is a multiple of the batch size and fixes every row");
    }
    Matrix out(b, z.cols());
    for (std::size_t i = 0; i < b; ++i) {
        const auto self = z.row(i);
        const auto partner = z.row((i + shift) % b);
        auto dst = out.row(i);
        for (std::size_t c = 0; c < dst.size(); ++c) {
            dst[c] = (1.0 - alpha) * self[c] + alpha * partner[c];
        }
    }
    return out;
}

Var cyclic_mix(Tape& t, Var z, double alpha, std::size_t shift) {
    Matrix out = cyclic_mix(t.value(z), alpha, shift);
    return t.record("cyclic_mix", std::move(out), {z}, [z, alpha, shift](Tape& tape, std::size_t self) {
        const Matrix& g = tape.grad(Var{self});
        Matrix& gz = tape.grad_accumulator(z);
        const std::size_t b = g.rows();
        for (std::size_t i = 0; i < b; ++i) {
            const auto src = g.row(i);
            auto own = gz.row(i);
            auto partner = gz.row((i + shift) % b);
            for (std::size_t c = 0; c < src.size(); ++c) {
                own[c] += (1.0 - alpha) * src[c];
                partner[c] += alpha * src[c];
            }
        }
    });
}

namespace {

void check_targets(const Matrix& logits, std::span<const int> targets) {
    require(targets.size() == logits.rows(),
            "softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                logits.shape_string() + " logits");
    for (int target : targets) {
        if (target < 0 || static_cast<std::size_t>(target) >= logits.cols()) {
            throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(target) +
                                    " outside [0, " + std::to_string(logits.cols()) + ")");
        }
    }
}

// Row-wise softmax probabilities and the mean negative log-likelihood.
double softmax_rows(const Matrix& logits, std::span<const int> targets, Matrix* probs) {
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto row = logits.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) {
            z += std::exp(v - mx);
        }
        const double log_z = std::log(z) + mx;
        total += log_z - row[static_cast<std::size_t>(targets[r])];
        if (probs) {
            auto dst = probs->row(r);
            for (std::size_t c = 0; c < row.size(); ++c) {
                dst[c] = std::exp(row[c] - log_z);
            }
        }
    }
    return total / static_cast<double>(logits.rows());
}

} // namespace

double softmax_cross_entropy(const Matrix& logits, std::span<const int> targets) {
    check_targets(logits, targets);
    return softmax_rows(logits, targets, nullptr);
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> targets) {
    const Matrix& lv = t.value(logits);
    check_targets(lv, targets);
    Matrix probs(lv.rows(), lv.cols());
    const double loss = softmax_rows(lv, targets, &probs);
    std::vector<int> tgt(targets.begin(), targets.end());
    return t.record("softmax_cross_entropy", Matrix(1, 1, loss), {logits},
                    [logits, p = std::move(probs), tgt = std::move(tgt)](Tape& tape, std::size_t self) {
                        const double g = tape.grad(Var{self})(0, 0) / static_cast<double>(p.rows());
                        Matrix& gl = tape.grad_accumulator(logits);
                        for (std::size_t r = 0; r < p.rows(); ++r) {
                            const auto src = p.row(r);
                            auto dst = gl.row(r);
                            for (std::size_t c = 0; c < src.size(); ++c) {
                                dst[c] += g * src[c];
                            }
                            dst[static_cast<std::size_t>(tgt[r])] -= g;
                        }
                    });
}

} // namespace grokscope::ad
