#include "tabret/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace tabret {

Matrix kaiming_uniform(int rows, int cols, int fan_in, RngState& rng) {
    if (fan_in < 1) throw std::invalid_argument("fan_in must be >= 1");
    const double bound = std::sqrt(6.0 / fan_in);
    Matrix m(rows, cols);
    for (double& v : m.data) v = (rng.uniform() * 2.0 - 1.0) * bound;
    return m;
}

Var AttentionLayer::forward(Tape& t, Var x, int n_samples, int n_tokens,
                            RngState& rng, bool training) const {
    Var qv = q.forward(t, x);
    Var kv = k.forward(t, x);
    Var vv = v.forward(t, x);
    Var mixed = op_attention(t, qv, kv, vv, n_samples, n_tokens, n_heads, dropout,
                             rng, training);
    return out.forward(t, mixed);
}

Var RegluFfn::forward(Tape& t, Var x, RngState& rng, bool training) const {
    Var a = value.forward(t, x);
    Var g = op_relu(t, gate.forward(t, x));
    Var h = op_dropout(t, op_mul(t, a, g), dropout, rng, training);
    return out.forward(t, h);
}

Var TransformerBlock::forward(Tape& t, Var x, int n_samples, int n_tokens,
                              RngState& rng, bool training) const {
    Var a = attn.forward(t, ln_attn.forward(t, x), n_samples, n_tokens, rng, training);
    Var y = op_add(t, x, op_dropout(t, a, residual_dropout, rng, training));
    Var f = ffn.forward(t, ln_ffn.forward(t, y), rng, training);
    return op_add(t, y, op_dropout(t, f, residual_dropout, rng, training));
}

LinearLayer make_linear(ParamStore& store, const std::string& prefix, int d_in,
                        int d_out, RngState& rng, bool with_bias) {
    LinearLayer l;
    l.W = &store.add(prefix + ".W", kaiming_uniform(d_in, d_out, d_in, rng));
    if (with_bias) l.b = &store.add(prefix + ".b", Matrix::zeros(1, d_out));
    return l;
}

LayerNormLayer make_layer_norm(ParamStore& store, const std::string& prefix, int d) {
    LayerNormLayer l;
    l.gamma = &store.add(prefix + ".gamma", Matrix::full(1, d, 1.0));
    l.beta = &store.add(prefix + ".beta", Matrix::zeros(1, d));
    return l;
}

TransformerBlock make_block(ParamStore& store, const std::string& prefix, int d,
                            int n_heads, double ffn_size_factor, double attn_dropout,
                            double ffn_dropout, double residual_dropout,
                            RngState& rng) {
    TransformerBlock blk;
    blk.ln_attn = make_layer_norm(store, prefix + ".ln_attn", d);
    blk.ln_ffn = make_layer_norm(store, prefix + ".ln_ffn", d);
    blk.attn.q = make_linear(store, prefix + ".attn.q", d, d, rng);
    // the key projection carries no bias: softmax scores are invariant to a
    // shared key offset, so the parameter could never receive gradient
    blk.attn.k = make_linear(store, prefix + ".attn.k", d, d, rng, false);
    blk.attn.v = make_linear(store, prefix + ".attn.v", d, d, rng);
    blk.attn.out = make_linear(store, prefix + ".attn.out", d, d, rng);
    blk.attn.n_heads = n_heads;
    blk.attn.dropout = attn_dropout;
    const int h = std::max(1, static_cast<int>(std::lround(ffn_size_factor * d)));
    blk.ffn.value = make_linear(store, prefix + ".ffn.value", d, h, rng);
    blk.ffn.gate = make_linear(store, prefix + ".ffn.gate", d, h, rng);
    blk.ffn.out = make_linear(store, prefix + ".ffn.out", h, d, rng);
    blk.ffn.dropout = ffn_dropout;
    blk.residual_dropout = residual_dropout;
    return blk;
}

GradCheckResult grad_check(ParamStore& params,
                           const std::function<double(bool with_grad)>& loss,
                           double eps) {
    params.zero_grads();
    double base = loss(true);
    if (!std::isfinite(base)) throw std::runtime_error("non-finite loss in grad_check");

    GradCheckResult res;
    for (auto& [name, p] : params) {
        if (!p.trainable) continue;
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            const double saved = p.value.data[i];
            p.value.data[i] = saved + eps;
            double lp = loss(false);
            p.value.data[i] = saved - eps;
            double lm = loss(false);
            p.value.data[i] = saved;
            double numeric = (lp - lm) / (2.0 * eps);
            double analytic = p.grad.data[i];
            double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            double rel = std::fabs(analytic - numeric) / denom;
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_param = name;
            }
        }
    }
    return res;
}

}  // namespace tabret
