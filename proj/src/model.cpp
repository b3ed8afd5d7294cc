#include "grokscope/model.hpp"

#include "grokscope/core/rng.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace grokscope {

namespace {

constexpr std::size_t kSeqLen = 3;
constexpr double kEmbedStd = 0.02;
constexpr int kCheckpointVersion = 1;

} // namespace

std::string to_string(Architecture arch) {
    return arch == Architecture::transformer ? "transformer" : "mlp";
}

Architecture parse_architecture(std::string_view text) {
    if (text == "transformer") {
        return Architecture::transformer;
    }
    if (text == "mlp") {
        return Architecture::mlp;
    }
    throw std::invalid_argument("unknown architecture '" + std::string(text) + "'");
}

std::string to_string(NormPlacement norm) {
    switch (norm) {
    case NormPlacement::none: return "none";
    case NormPlacement::pre: return "pre";
    case NormPlacement::post: return "post";
    }
    return "none";
}

NormPlacement parse_norm_placement(std::string_view text) {
    if (text == "none") {
        return NormPlacement::none;
    }
    if (text == "pre") {
        return NormPlacement::pre;
    }
    if (text == "post") {
        return NormPlacement::post;
    }
    throw std::invalid_argument("unknown layer-norm placement '" + std::string(text) + "'");
}

int ModelSpec::representation_dim() const noexcept {
    return arch == Architecture::transformer ? transformer.d_model : mlp.hidden2;
}

ModelSpec ModelSpec::for_task(const TaskSpec& task, Architecture arch, TransformerShape transformer,
                              MlpShape mlp) {
    ModelSpec spec;
    spec.arch = arch;
    spec.transformer = transformer;
    spec.mlp = mlp;
    spec.vocab = task.vocab_size();
    spec.classes = task.num_classes();
    return spec;
}

double param_norm(const ParamSet& params) {
    double s = 0.0;
    for (const ParamTensor& p : params) {
        s += p.value.sum_squares();
    }
    return std::sqrt(s);
}

const Matrix& find_param(const ParamSet& params, std::string_view name) {
    for (const ParamTensor& p : params) {
        if (p.name == name) {
            return p.value;
        }
    }
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

namespace {

Matrix normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.values()) {
        v = stddev * rng.normal();
    }
    return m;
}

Matrix fan_in_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    return normal_matrix(rng, rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
}

std::size_t to_size(int v) { return static_cast<std::size_t>(v); }

void validate_spec(const ModelSpec& spec) {
    if (spec.vocab <= 0 || spec.classes <= 0) {
        throw std::invalid_argument("model spec needs positive vocab and class counts");
    }
    if (spec.arch == Architecture::transformer) {
        const TransformerShape& s = spec.transformer;
        if (s.d_model <= 0 || s.heads <= 0 || s.d_ff <= 0 || s.d_model % s.heads != 0) {
            throw std::invalid_argument("transformer shape: d_model must be a positive multiple of heads");
        }
    } else if (spec.mlp.hidden1 <= 0 || spec.mlp.hidden2 <= 0) {
        throw std::invalid_argument("mlp shape: widths must be positive");
    }
}

std::vector<std::size_t> token_column(std::span<const Example> batch, std::size_t pos, int vocab) {
    std::vector<std::size_t> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const int tok = batch[i].tokens[pos];
        if (tok < 0 || tok >= vocab) {
            throw std::out_of_range("token " + std::to_string(tok) + " outside vocabulary of " +
                                    std::to_string(vocab));
        }
        out[i] = static_cast<std::size_t>(tok);
    }
    return out;
}

std::vector<ad::Var> push_params(ad::Tape& tape, const ParamSet& params, bool trainable) {
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const ParamTensor& p : params) {
        vars.push_back(trainable ? tape.parameter(p.value) : tape.constant(p.value));
    }
    return vars;
}

ad::Var var_named(const ParamSet& params, const std::vector<ad::Var>& vars, std::string_view name) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name == name) {
            return vars[i];
        }
    }
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

void check_batch(std::span<const Example> batch) {
    if (batch.empty()) {
        throw std::invalid_argument("forward pass needs a non-empty batch");
    }
}

ForwardOutput read_output(const ad::Tape& tape, const ForwardGraph& g) {
    return ForwardOutput{tape.value(g.logits), tape.value(g.z)};
}

} // namespace

ParamSet init_transformer(const ModelSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    const TransformerShape& s = spec.transformer;
    const std::size_t d = to_size(s.d_model);
    const std::size_t f = to_size(s.d_ff);
    Rng rng = Rng::stream(seed, "init");
    ParamSet p;
    p.push_back({"tok_embed", normal_matrix(rng, to_size(spec.vocab), d, kEmbedStd), false});
    p.push_back({"pos_embed", normal_matrix(rng, kSeqLen, d, kEmbedStd), false});
    p.push_back({"attn.wq", fan_in_matrix(rng, d, d), false});
    p.push_back({"attn.wk", fan_in_matrix(rng, d, d), false});
    p.push_back({"attn.wv", fan_in_matrix(rng, d, d), false});
    p.push_back({"attn.wo", fan_in_matrix(rng, d, d), false});
    if (s.norm != NormPlacement::none) {
        p.push_back({"ln1.gain", Matrix(1, d, 1.0), true});
        p.push_back({"ln1.bias", Matrix(1, d, 0.0), true});
    }
    p.push_back({"ffn.w1", fan_in_matrix(rng, d, f), false});
    p.push_back({"ffn.b1", Matrix(1, f), true});
    p.push_back({"ffn.w2", fan_in_matrix(rng, f, d), false});
    p.push_back({"ffn.b2", Matrix(1, d), true});
    if (s.norm != NormPlacement::none) {
        p.push_back({"ln2.gain", Matrix(1, d, 1.0), true});
        p.push_back({"ln2.bias", Matrix(1, d, 0.0), true});
    }
    p.push_back({"head", fan_in_matrix(rng, d, to_size(spec.classes)), false});
    return p;
}

ParamSet init_mlp(const ModelSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    const MlpShape& s = spec.mlp;
    Rng rng = Rng::stream(seed, "init");
    ParamSet p;
    // Rows 0..p-1 take the first operand, rows p..2p-1 the second.
    p.push_back({"mlp.w1", fan_in_matrix(rng, 2 * to_size(spec.classes), to_size(s.hidden1)), false});
    p.push_back({"mlp.b1", Matrix(1, to_size(s.hidden1)), true});
    p.push_back({"mlp.w2", fan_in_matrix(rng, to_size(s.hidden1), to_size(s.hidden2)), false});
    p.push_back({"mlp.b2", Matrix(1, to_size(s.hidden2)), true});
    p.push_back({"head", fan_in_matrix(rng, to_size(s.hidden2), to_size(spec.classes)), false});
    return p;
}

namespace {

ForwardGraph transformer_graph(ad::Tape& tape, const ParamSet& params, std::vector<ad::Var> vars,
                               const ModelSpec& spec, std::span<const Example> batch) {
    check_batch(batch);
    const TransformerShape& s = spec.transformer;
    ForwardGraph g;
    g.params = std::move(vars);
    auto P = [&](std::string_view name) { return var_named(params, g.params, name); };

    const std::size_t b = batch.size();
    std::vector<std::size_t> tokens(b * kSeqLen);
    std::vector<std::size_t> positions(b * kSeqLen);
    std::vector<std::size_t> last(b);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t pos = 0; pos < kSeqLen; ++pos) {
            const int tok = batch[i].tokens[pos];
            if (tok < 0 || tok >= spec.vocab) {
                throw std::out_of_range("token " + std::to_string(tok) + " outside vocabulary of " +
                                        std::to_string(spec.vocab));
            }
            tokens[i * kSeqLen + pos] = static_cast<std::size_t>(tok);
            positions[i * kSeqLen + pos] = pos;
        }
        last[i] = i * kSeqLen + kSeqLen - 1;
    }

    const ad::Var x = ad::add(tape, ad::gather_rows(tape, P("tok_embed"), std::move(tokens)),
                              ad::gather_rows(tape, P("pos_embed"), std::move(positions)));
    const bool pre = s.norm == NormPlacement::pre;
    const bool post = s.norm == NormPlacement::post;
    const ad::Var attn_in = pre ? ad::layer_norm(tape, x, P("ln1.gain"), P("ln1.bias")) : x;

    // Only the '=' position feeds the head, so queries are formed for it alone.
    const ad::Var keys = ad::matmul(tape, attn_in, P("attn.wk"));
    const ad::Var values = ad::matmul(tape, attn_in, P("attn.wv"));
    const ad::Var query = ad::matmul(tape, ad::gather_rows(tape, attn_in, last), P("attn.wq"));
    const auto heads = to_size(s.heads);
    g.attention = ad::attention_probs(tape, query, keys, heads, kSeqLen);
    const ad::Var attended = ad::attention_mix(tape, g.attention, values, heads, kSeqLen);
    ad::Var h = ad::add(tape, ad::gather_rows(tape, x, last), ad::matmul(tape, attended, P("attn.wo")));
    if (post) {
        h = ad::layer_norm(tape, h, P("ln1.gain"), P("ln1.bias"));
    }

    const ad::Var ffn_in = pre ? ad::layer_norm(tape, h, P("ln2.gain"), P("ln2.bias")) : h;
    const ad::Var hidden = ad::relu(tape, ad::add_row(tape, ad::matmul(tape, ffn_in, P("ffn.w1")), P("ffn.b1")));
    const ad::Var ffn_out = ad::add_row(tape, ad::matmul(tape, hidden, P("ffn.w2")), P("ffn.b2"));
    ad::Var z = ad::add(tape, h, ffn_out);
    if (post) {
        z = ad::layer_norm(tape, z, P("ln2.gain"), P("ln2.bias"));
    }
    g.z = z;
    g.logits = ad::matmul(tape, z, P("head"));
    return g;
}

ForwardGraph mlp_graph(ad::Tape& tape, const ParamSet& params, std::vector<ad::Var> vars, const ModelSpec& spec,
                       std::span<const Example> batch) {
    check_batch(batch);
    ForwardGraph g;
    g.params = std::move(vars);
    auto P = [&](std::string_view name) { return var_named(params, g.params, name); };

    // onehot(a) | onehot(b) times W1 is a sum of two row lookups.
    std::vector<std::size_t> rows_b = token_column(batch, 1, spec.classes);
    for (std::size_t& r : rows_b) {
        r += to_size(spec.classes);
    }
    const ad::Var w1 = P("mlp.w1");
    const ad::Var pre1 = ad::add(tape, ad::gather_rows(tape, w1, token_column(batch, 0, spec.classes)),
                                 ad::gather_rows(tape, w1, std::move(rows_b)));
    const ad::Var h1 = ad::relu(tape, ad::add_row(tape, pre1, P("mlp.b1")));
    g.z = ad::relu(tape, ad::add_row(tape, ad::matmul(tape, h1, P("mlp.w2")), P("mlp.b2")));
    g.logits = ad::matmul(tape, g.z, P("head"));
    return g;
}

} // namespace

ForwardGraph build_transformer(ad::Tape& tape, const ParamSet& params, const ModelSpec& spec,
                               std::span<const Example> batch, bool trainable) {
    return transformer_graph(tape, params, push_params(tape, params, trainable), spec, batch);
}

ForwardGraph build_mlp(ad::Tape& tape, const ParamSet& params, const ModelSpec& spec,
                       std::span<const Example> batch, bool trainable) {
    return mlp_graph(tape, params, push_params(tape, params, trainable), spec, batch);
}

ForwardGraph build_with_vars(ad::Tape& tape, const ParamSet& layout, std::vector<ad::Var> vars,
                             const ModelSpec& spec, std::span<const Example> batch) {
    if (vars.size() != layout.size()) {
        throw std::invalid_argument("build_with_vars: " + std::to_string(vars.size()) + " handles for " +
                                    std::to_string(layout.size()) + " parameters");
    }
    return spec.arch == Architecture::transformer ? transformer_graph(tape, layout, std::move(vars), spec, batch)
                                                  : mlp_graph(tape, layout, std::move(vars), spec, batch);
}

ForwardOutput forward_transformer(const ParamSet& params, const ModelSpec& spec,
                                  std::span<const Example> batch) {
    ad::Tape tape;
    const ForwardGraph g = build_transformer(tape, params, spec, batch, false);
    return read_output(tape, g);
}

ForwardOutput forward_mlp(const ParamSet& params, const ModelSpec& spec, std::span<const Example> batch) {
    ad::Tape tape;
    const ForwardGraph g = build_mlp(tape, params, spec, batch, false);
    return read_output(tape, g);
}

// ---- Model -------------------------------------------------------------------

Model::Model(ModelSpec spec, ParamSet params) : spec_(spec), params_(std::move(params)) {
    validate_spec(spec_);
    const ParamSet reference = spec_.arch == Architecture::transformer ? init_transformer(spec_, 0)
                                                                       : init_mlp(spec_, 0);
    if (reference.size() != params_.size()) {
        throw std::invalid_argument("parameter set has " + std::to_string(params_.size()) +
                                    " tensors, expected " + std::to_string(reference.size()));
    }
    for (std::size_t i = 0; i < reference.size(); ++i) {
        if (reference[i].name != params_[i].name || !reference[i].value.same_shape(params_[i].value)) {
            throw std::invalid_argument("parameter '" + params_[i].name + "' (" +
                                        params_[i].value.shape_string() + ") does not match expected '" +
                                        reference[i].name + "' (" + reference[i].value.shape_string() + ")");
        }
    }
}

Model Model::init(const ModelSpec& spec, std::uint64_t seed) {
    return Model(spec, spec.arch == Architecture::transformer ? init_transformer(spec, seed)
                                                              : init_mlp(spec, seed));
}

ForwardGraph Model::build(ad::Tape& tape, std::span<const Example> batch, bool trainable) const {
    return spec_.arch == Architecture::transformer ? build_transformer(tape, params_, spec_, batch, trainable)
                                                   : build_mlp(tape, params_, spec_, batch, trainable);
}

ForwardOutput Model::forward(std::span<const Example> batch) const {
    ad::Tape tape;
    const ForwardGraph g = build(tape, batch, false);
    return read_output(tape, g);
}

// ---- checkpoints -------------------------------------------------------------

void save_checkpoint(std::ostream& out, const Model& model) {
    const ModelSpec& s = model.spec();
    out << "grokscope-checkpoint " << kCheckpointVersion << '\n';
    out << "arch " << to_string(s.arch) << '\n';
    out << "vocab " << s.vocab << " classes " << s.classes << '\n';
    out << "transformer " << s.transformer.d_model << ' ' << s.transformer.heads << ' '
        << s.transformer.d_ff << ' ' << to_string(s.transformer.norm) << '\n';
    out << "mlp " << s.mlp.hidden1 << ' ' << s.mlp.hidden2 << '\n';
    out << "tensors " << model.params().size() << '\n';
    char buf[64];
    for (const ParamTensor& p : model.params()) {
        out << "tensor " << p.name << ' ' << p.value.rows() << ' ' << p.value.cols() << ' '
            << (p.is_bias ? 1 : 0) << '\n';
        for (std::size_t r = 0; r < p.value.rows(); ++r) {
            for (std::size_t c = 0; c < p.value.cols(); ++c) {
                std::snprintf(buf, sizeof buf, "%a", p.value(r, c));
                out << (c ? " " : "") << buf;
            }
            out << '\n';
        }
    }
}

namespace {

void expect_word(std::istream& in, std::string_view word) {
    std::string got;
    if (!(in >> got) || got != word) {
        throw std::runtime_error("checkpoint: expected '" + std::string(word) + "', got '" + got + "'");
    }
}

} // namespace

Model load_checkpoint(std::istream& in) {
    expect_word(in, "grokscope-checkpoint");
    int version = 0;
    in >> version;
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    ModelSpec s;
    std::string word;
    expect_word(in, "arch");
    in >> word;
    s.arch = parse_architecture(word);
    expect_word(in, "vocab");
    in >> s.vocab;
    expect_word(in, "classes");
    in >> s.classes;
    expect_word(in, "transformer");
    in >> s.transformer.d_model >> s.transformer.heads >> s.transformer.d_ff >> word;
    s.transformer.norm = parse_norm_placement(word);
    expect_word(in, "mlp");
    in >> s.mlp.hidden1 >> s.mlp.hidden2;
    expect_word(in, "tensors");
    std::size_t count = 0;
    in >> count;
    ParamSet params;
    for (std::size_t i = 0; i < count; ++i) {
        ParamTensor p;
        std::size_t rows = 0;
        std::size_t cols = 0;
        int bias = 0;
        expect_word(in, "tensor");
        in >> p.name >> rows >> cols >> bias;
        p.is_bias = bias != 0;
        std::vector<double> values(rows * cols);
        for (double& v : values) {
            if (!(in >> word)) {
                throw std::runtime_error("checkpoint: truncated tensor '" + p.name + "'");
            }
            v = std::strtod(word.c_str(), nullptr);
        }
        p.value = Matrix(rows, cols, std::move(values));
        params.push_back(std::move(p));
    }
    if (!in) {
        throw std::runtime_error("checkpoint: malformed input");
    }
    return Model(s, std::move(params));
}

} // namespace grokscope
