#pragma once

#include "grokscope/core/autodiff.hpp"
#include "grokscope/core/matrix.hpp"
#include "grokscope/tasks.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace grokscope {

enum class Architecture { transformer, mlp };

// Where LayerNorm sits in the transformer block.
//   none: x + attn(x), then + ffn(.)
//   pre:  x + attn(ln1(x)), then h + ffn(ln2(h))
//   post: ln1(x + attn(x)), then ln2(h + ffn(h))
enum class NormPlacement { none, pre, post };

std::string to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);
std::string to_string(NormPlacement norm);
NormPlacement parse_norm_placement(std::string_view text);

struct TransformerShape {
    int d_model = 128;
    int heads = 4;
    int d_ff = 512;
    NormPlacement norm = NormPlacement::post;

    bool operator==(const TransformerShape&) const = default;
};

// Concatenated one-hot operands through two ReLU layers.
struct MlpShape {
    int hidden1 = 256;
    int hidden2 = 128;

    bool operator==(const MlpShape&) const = default;
};

struct ModelSpec {
    Architecture arch = Architecture::transformer;
    TransformerShape transformer;
    MlpShape mlp;
    int vocab = 0;   // operand tokens + '='
    int classes = 0; // output classes

    // Width of z, the pre-head representation.
    int representation_dim() const noexcept;
    static ModelSpec for_task(const TaskSpec& task, Architecture arch,
                              TransformerShape transformer = {}, MlpShape mlp = {});

    bool operator==(const ModelSpec&) const = default;
};

struct ParamTensor {
    std::string name;
    Matrix value;
    bool is_bias = false; // biases and LayerNorm gain/bias

    bool operator==(const ParamTensor&) const = default;
};

using ParamSet = std::vector<ParamTensor>;

// Global L2 norm over every tensor.
double param_norm(const ParamSet& params);
const Matrix& find_param(const ParamSet& params, std::string_view name);

struct ForwardOutput {
    Matrix logits; // [B x classes]
    Matrix z;      // [B x d]
};

// Handles into a tape for one forward pass.
struct ForwardGraph {
    ad::Var logits;
    ad::Var z;
    ad::Var attention; // transformer only: [B x heads*3]
    std::vector<ad::Var> params; // parallel to the ParamSet
};

ParamSet init_transformer(const ModelSpec& spec, std::uint64_t seed);
ParamSet init_mlp(const ModelSpec& spec, std::uint64_t seed);

ForwardGraph build_transformer(ad::Tape& tape, const ParamSet& params, const ModelSpec& spec,
                               std::span<const Example> batch, bool trainable);
ForwardGraph build_mlp(ad::Tape& tape, const ParamSet& params, const ModelSpec& spec,
                       std::span<const Example> batch, bool trainable);

// Builds on existing handles (one per tensor of `layout`, same order); the
// values come from the tape, `layout` supplies names only.
ForwardGraph build_with_vars(ad::Tape& tape, const ParamSet& layout, std::vector<ad::Var> vars,
                             const ModelSpec& spec, std::span<const Example> batch);

ForwardOutput forward_transformer(const ParamSet& params, const ModelSpec& spec,
                                  std::span<const Example> batch);
ForwardOutput forward_mlp(const ParamSet& params, const ModelSpec& spec,
                          std::span<const Example> batch);

class Model {
public:
    Model(ModelSpec spec, ParamSet params);

    // Draws parameters from the (seed, "init") substream.
    static Model init(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const noexcept { return spec_; }
    const ParamSet& params() const noexcept { return params_; }
    ParamSet& params() noexcept { return params_; }

    ForwardGraph build(ad::Tape& tape, std::span<const Example> batch, bool trainable) const;
    ForwardOutput forward(std::span<const Example> batch) const;

    // Rows 0..p-1 map operand tokens (the first operand's block for the MLP).
    const Matrix& token_embedding() const {
        return find_param(params_, spec_.arch == Architecture::mlp ? "mlp.w1" : "tok_embed");
    }

    bool operator==(const Model&) const = default;

private:
    ModelSpec spec_;
    ParamSet params_;
};

// Text checkpoint; values are written as hex floats so a round trip is exact.
void save_checkpoint(std::ostream& out, const Model& model);
Model load_checkpoint(std::istream& in);

} // namespace grokscope
