#pragma once

#include <functional>
#include <string>

#include "tabret/param.hpp"
#include "tabret/tape.hpp"

namespace tabret {

// Uniform Kaiming init with rectifier gain: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
Matrix kaiming_uniform(int rows, int cols, int fan_in, RngState& rng);

// Layer views hold pointers into a ParamStore; they own no state of their own.

struct LinearLayer {
    Parameter* W = nullptr;  // in x out
    Parameter* b = nullptr;  // 1 x out; null for bias-free projections
    Var forward(Tape& t, Var x) const {
        Var y = op_matmul(t, x, t.leaf(*W));
        return b ? op_add_rowvec(t, y, t.leaf(*b)) : y;
    }
};

struct LayerNormLayer {
    Parameter* gamma = nullptr;  // 1 x d
    Parameter* beta = nullptr;   // 1 x d
    double eps = 1e-5;
    Var forward(Tape& t, Var x) const {
        return op_layer_norm(t, x, t.leaf(*gamma), t.leaf(*beta), eps);
    }
};

struct AttentionLayer {
    LinearLayer q, k, v, out;
    int n_heads = 8;
    double dropout = 0.1;
    // x is (n_samples*n_tokens) x d, sample-major.
    Var forward(Tape& t, Var x, int n_samples, int n_tokens, RngState& rng,
                bool training) const;
};

// Gated feed-forward: out = W_out * dropout(value(x) .* relu(gate(x))) + b.
struct RegluFfn {
    LinearLayer value, gate, out;
    double dropout = 0.1;
    Var forward(Tape& t, Var x, RngState& rng, bool training) const;
};

// Pre-norm block: x + Drop(MHA(LN(x))), then y + Drop(FFN(LN(y))).
struct TransformerBlock {
    LayerNormLayer ln_attn, ln_ffn;
    AttentionLayer attn;
    RegluFfn ffn;
    double residual_dropout = 0.0;
    Var forward(Tape& t, Var x, int n_samples, int n_tokens, RngState& rng,
                bool training) const;
};

// Registers the parameters of a block under `prefix` and returns a view.
TransformerBlock make_block(ParamStore& store, const std::string& prefix, int d,
                            int n_heads, double ffn_size_factor, double attn_dropout,
                            double ffn_dropout, double residual_dropout,
                            RngState& rng);
LinearLayer make_linear(ParamStore& store, const std::string& prefix, int d_in,
                        int d_out, RngState& rng, bool with_bias = true);
LayerNormLayer make_layer_norm(ParamStore& store, const std::string& prefix, int d);

// Central-finite-difference check of every trainable scalar against the
// analytic gradient. `loss` must be deterministic and must populate param
// grads when asked to (it is called once with gradients, then re-evaluated
// under perturbations).
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
};
GradCheckResult grad_check(ParamStore& params,
                           const std::function<double(bool with_grad)>& loss,
                           double eps = 1e-6);

}  // namespace tabret
