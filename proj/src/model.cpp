#include "tabret/model.hpp"

#include <algorithm>
#include <cmath>

namespace tabret {

std::string phase_name(Phase p) {
    switch (p) {
        case Phase::Pretrain: return "pretrain";
        case Phase::Retokenize: return "retokenize";
        case Phase::Finetune: return "finetune";
    }
    return "?";
}

Phase phase_from_name(const std::string& s) {
    if (s == "pretrain") return Phase::Pretrain;
    if (s == "retokenize") return Phase::Retokenize;
    if (s == "finetune") return Phase::Finetune;
    throw ValidationError("unknown phase '" + s + "'");
}

int TabRetConfig::token_size_for(int n_blocks) {
    static const int sizes[] = {96, 128, 192, 256, 320, 384};
    if (n_blocks < 1 || n_blocks > 6)
        throw ValidationError("n_blocks must lie in [1,6]");
    return sizes[n_blocks - 1];
}

void TabRetConfig::validate() const {
    if (n_blocks < 1 || n_blocks > 6) throw ValidationError("n_blocks must lie in [1,6]");
    if (token_dim() % n_heads != 0)
        throw ValidationError("token dim must be divisible by head count");
    for (double r : {attn_dropout, ffn_dropout, residual_dropout})
        if (r < 0.0 || r >= 1.0) throw ValidationError("dropout rates must lie in [0,1)");
    if (ln_eps <= 0.0) throw ValidationError("ln_eps must be positive");
}

bool MaskPlan::is_masked(int row, int col) const {
    const auto& m = masked[row];
    return std::binary_search(m.begin(), m.end(), col);
}

MaskPlan sample_mask_plan(int k, double alpha, int n_rows, RngState& rng) {
    if (k < 1) throw ValidationError("need at least one column to mask");
    if (alpha < 0.0 || alpha >= 1.0) throw ValidationError("mask ratio must lie in [0,1)");
    const int m_masked = std::max(1, static_cast<int>(std::floor(alpha * k)));
    MaskPlan plan;
    plan.k = k;
    plan.masked.resize(n_rows);
    plan.kept.resize(n_rows);
    for (int r = 0; r < n_rows; ++r) {
        plan.masked[r] = rng.choose(m_masked, k);
        auto& kept = plan.kept[r];
        kept.reserve(k - m_masked);
        size_t mi = 0;
        for (int j = 0; j < k; ++j) {
            if (mi < plan.masked[r].size() && plan.masked[r][mi] == j)
                ++mi;
            else
                kept.push_back(j);
        }
    }
    return plan;
}

MaskPlan empty_mask_plan(int k, int n_rows) {
    MaskPlan plan;
    plan.k = k;
    plan.masked.assign(n_rows, {});
    plan.kept.resize(n_rows);
    for (int r = 0; r < n_rows; ++r) {
        plan.kept[r].resize(k);
        for (int j = 0; j < k; ++j) plan.kept[r][j] = j;
    }
    return plan;
}

std::vector<std::string> TabRetModel::column_param_names(const ColumnSpec& c,
                                                         bool with_tokenizer) {
    std::vector<std::string> names;
    if (with_tokenizer) {
        names.push_back("ft." + c.name + ".W");
        names.push_back("ft." + c.name + ".b");
    }
    names.push_back("post.pos." + c.name);
    names.push_back("proj." + c.name + ".W");
    names.push_back("proj." + c.name + ".b");
    return names;
}

TabRetModel::TabRetModel(TableSchema schema, TabRetConfig cfg, RngState& rng)
    : schema_(std::move(schema)), cfg_(cfg) {
    schema_.validate();
    cfg_.validate();
    features_ = schema_.feature_columns();
    const int d = cfg_.token_dim();
    const int dpe = cfg_.pe_dim();

    for (const auto& c : schema_.columns) {
        const bool is_target = schema_.target && c.name == *schema_.target;
        if (!is_target) {
            if (c.kind == ColumnKind::Numerical) {
                params_.add("ft." + c.name + ".W", kaiming_uniform(1, d, 1, rng));
            } else {
                params_.add("ft." + c.name + ".W",
                            kaiming_uniform(c.cardinality, d, c.cardinality, rng));
            }
            params_.add("ft." + c.name + ".b", Matrix::zeros(1, d));
        }
        params_.add("post.pos." + c.name, kaiming_uniform(1, dpe, dpe, rng));
        const int out_dim = c.kind == ColumnKind::Numerical ? 1 : c.cardinality;
        params_.add("proj." + c.name + ".W", kaiming_uniform(dpe, out_dim, dpe, rng));
        params_.add("proj." + c.name + ".b", Matrix::zeros(1, out_dim));
    }

    align_ln_ = make_layer_norm(params_, "align.ln", d);
    align_ln_.eps = cfg_.ln_eps;
    align_linear_ = make_linear(params_, "align.linear", d, d, rng);
    for (int i = 0; i < cfg_.n_blocks; ++i) {
        enc_blocks_.push_back(make_block(params_, "enc.block" + std::to_string(i), d,
                                         cfg_.n_heads, cfg_.ffn_size_factor,
                                         cfg_.attn_dropout, cfg_.ffn_dropout,
                                         cfg_.residual_dropout, rng));
        enc_blocks_.back().ln_attn.eps = cfg_.ln_eps;
        enc_blocks_.back().ln_ffn.eps = cfg_.ln_eps;
    }
    enc_ln_ = make_layer_norm(params_, "enc.ln", d);
    enc_ln_.eps = cfg_.ln_eps;
    post_linear_ = make_linear(params_, "post.linear", d, dpe, rng);
    params_.add("post.mask", kaiming_uniform(1, dpe, dpe, rng));
    post_block_ = make_block(params_, "post.block", dpe, cfg_.n_heads,
                             cfg_.ffn_size_factor, cfg_.attn_dropout, cfg_.ffn_dropout,
                             cfg_.residual_dropout, rng);
    post_block_.ln_attn.eps = cfg_.ln_eps;
    post_block_.ln_ffn.eps = cfg_.ln_eps;
    post_ln_ = make_layer_norm(params_, "post.ln", dpe);
    post_ln_.eps = cfg_.ln_eps;
}

void TabRetModel::rebuild_views() {
    const int d [[maybe_unused]] = cfg_.token_dim();
    auto linear = [&](const std::string& p) {
        return LinearLayer{&params_.get(p + ".W"), &params_.get(p + ".b")};
    };
    auto lnorm = [&](const std::string& p) {
        return LayerNormLayer{&params_.get(p + ".gamma"), &params_.get(p + ".beta"),
                              cfg_.ln_eps};
    };
    auto block = [&](const std::string& p) {
        TransformerBlock b;
        b.ln_attn = lnorm(p + ".ln_attn");
        b.ln_ffn = lnorm(p + ".ln_ffn");
        b.attn.q = linear(p + ".attn.q");
        b.attn.k = LinearLayer{&params_.get(p + ".attn.k.W"), nullptr};
        b.attn.v = linear(p + ".attn.v");
        b.attn.out = linear(p + ".attn.out");
        b.attn.n_heads = cfg_.n_heads;
        b.attn.dropout = cfg_.attn_dropout;
        b.ffn.value = linear(p + ".ffn.value");
        b.ffn.gate = linear(p + ".ffn.gate");
        b.ffn.out = linear(p + ".ffn.out");
        b.ffn.dropout = cfg_.ffn_dropout;
        b.residual_dropout = cfg_.residual_dropout;
        return b;
    };
    align_ln_ = lnorm("align.ln");
    align_linear_ = linear("align.linear");
    enc_blocks_.clear();
    for (int i = 0; i < cfg_.n_blocks; ++i)
        enc_blocks_.push_back(block("enc.block" + std::to_string(i)));
    enc_ln_ = lnorm("enc.ln");
    post_linear_ = linear("post.linear");
    post_block_ = block("post.block");
    post_ln_ = lnorm("post.ln");
}

void TabRetModel::extend_for_columns(const std::vector<ColumnSpec>& new_columns,
                                     RngState& rng) {
    const int d = cfg_.token_dim();
    const int dpe = cfg_.pe_dim();
    for (const auto& c : new_columns) {
        if (params_.contains("post.pos." + c.name))
            throw ValidationError("column '" + c.name + "' already registered");
        if (c.kind == ColumnKind::Numerical)
            params_.add("ft." + c.name + ".W", kaiming_uniform(1, d, 1, rng));
        else
            params_.add("ft." + c.name + ".W",
                        kaiming_uniform(c.cardinality, d, c.cardinality, rng));
        params_.add("ft." + c.name + ".b", Matrix::zeros(1, d));
        params_.add("post.pos." + c.name, kaiming_uniform(1, dpe, dpe, rng));
        const int out_dim = c.kind == ColumnKind::Numerical ? 1 : c.cardinality;
        params_.add("proj." + c.name + ".W", kaiming_uniform(dpe, out_dim, dpe, rng));
        params_.add("proj." + c.name + ".b", Matrix::zeros(1, out_dim));
    }
}

void TabRetModel::extend_for_target(const ColumnSpec& target, RngState& rng) {
    if (params_.contains("post.pos." + target.name))
        throw ValidationError("column '" + target.name + "' already registered");
    const int dpe = cfg_.pe_dim();
    params_.add("post.pos." + target.name, kaiming_uniform(1, dpe, dpe, rng));
    const int out_dim = target.kind == ColumnKind::Numerical ? 1 : target.cardinality;
    params_.add("proj." + target.name + ".W", kaiming_uniform(dpe, out_dim, dpe, rng));
    params_.add("proj." + target.name + ".b", Matrix::zeros(1, out_dim));
}

void TabRetModel::bind_schema(TableSchema schema) {
    schema.validate();
    for (const auto& c : schema.columns) {
        const bool is_target = schema.target && c.name == *schema.target;
        if (is_target) {
            if (!params_.contains("post.pos." + c.name))
                throw ValidationError("target column '" + c.name +
                                      "' has no positional embedding; extend first");
        } else if (!params_.contains("ft." + c.name + ".W")) {
            throw ValidationError("column '" + c.name +
                                  "' has no tokenizer; extend first");
        }
    }
    schema_ = std::move(schema);
    features_ = schema_.feature_columns();
}

void TabRetModel::set_trainable(Phase phase,
                                const std::vector<std::string>& new_columns) {
    if (phase == Phase::Pretrain) {
        params_.set_all_trainable(true);
        return;
    }
    params_.set_all_trainable(false);
    if (phase == Phase::Retokenize) {
        for (const auto& name : new_columns) {
            const ColumnSpec* c = schema_.find(name);
            if (!c) throw ValidationError("unknown column '" + name + "'");
            for (const auto& p : column_param_names(*c, true))
                params_.get(p).trainable = true;
        }
    } else {
        if (!schema_.target) throw ValidationError("fine-tuning needs a target column");
        const std::string& t = *schema_.target;
        params_.get("post.pos." + t).trainable = true;
        params_.get("proj." + t + ".W").trainable = true;
        params_.get("proj." + t + ".b").trainable = true;
    }
}

std::vector<std::string> TabRetModel::slot_columns() const {
    std::vector<std::string> out;
    for (const auto& c : features_) out.push_back(c.name);
    if (schema_.target) out.push_back(*schema_.target);
    return out;
}

Var TabRetModel::encode_tokens_(Tape& t, const Batch& batch, const MaskPlan& plan,
                                RngState& rng, bool training) {
    const int n = batch.row_count;
    const int k = static_cast<int>(features_.size());

    // Feature Tokenizer
    std::vector<Var> tokens;
    tokens.reserve(k);
    for (const auto& c : features_) {
        Var tok;
        if (c.kind == ColumnKind::Numerical) {
            const auto& col = batch.numerical.at(c.name);
            Matrix x(n, 1);
            for (int r = 0; r < n; ++r) x(r, 0) = col[r];
            tok = op_matmul(t, t.constant(std::move(x)),
                            t.leaf(params_.get("ft." + c.name + ".W")));
        } else {
            const auto& col = batch.categorical.at(c.name);
            for (int v : col)
                if (v < 0 || v >= c.cardinality)
                    throw DataError("category index out of range in '" + c.name + "'");
            tok = op_gather_rows(t, t.leaf(params_.get("ft." + c.name + ".W")),
                                 std::vector<int>(col.begin(), col.end()));
        }
        tok = op_add_rowvec(t, tok, t.leaf(params_.get("ft." + c.name + ".b")));
        tokens.push_back(tok);
    }
    Var t_ft = op_interleave(t, tokens, n);

    // Alignment Layer: Linear(LN(T_FT))
    Var t_al = align_linear_.forward(t, align_ln_.forward(t, t_ft));

    // Random Masking: drop masked tokens
    Var t_rm = t_al;
    int m = k;
    if (plan.masked_per_row() > 0) {
        m = k - plan.masked_per_row();
        std::vector<int> idx;
        idx.reserve(static_cast<size_t>(n) * m);
        for (int r = 0; r < n; ++r)
            for (int j : plan.kept[r]) idx.push_back(r * k + j);
        t_rm = op_gather_rows(t, t_al, std::move(idx));
    }

    // Encoder: N pre-norm blocks + final LN
    Var h = t_rm;
    for (const auto& blk : enc_blocks_) h = blk.forward(t, h, n, m, rng, training);
    Var t_enc = enc_ln_.forward(t, h);

    // Post-Encoder
    Var t1 = post_linear_.forward(t, t_enc);
    const auto slots = slot_columns();
    const int k_total = static_cast<int>(slots.size());
    std::vector<int> dest;
    dest.reserve(static_cast<size_t>(n) * m);
    for (int r = 0; r < n; ++r)
        for (int j : plan.kept[r]) dest.push_back(r * k_total + j);
    Var t2 = op_scatter_fill(t, t1, t.leaf(params_.get("post.mask")), std::move(dest),
                             n * k_total);
    std::vector<Var> pos;
    pos.reserve(k_total);
    for (const auto& name : slots) pos.push_back(t.leaf(params_.get("post.pos." + name)));
    Var t3 = op_add_tile_rows(t, t2, op_concat_rows(t, pos), n);
    Var t4 = post_block_.forward(t, t3, n, k_total, rng, training);
    return post_ln_.forward(t, t4);
}

Var TabRetModel::project_slot_(Tape& t, Var t_pe, int slot, int k_total, int n,
                               const std::string& column) {
    std::vector<int> idx(n);
    for (int r = 0; r < n; ++r) idx[r] = r * k_total + slot;
    Var x = op_gather_rows(t, t_pe, std::move(idx));
    LinearLayer proj{&params_.get("proj." + column + ".W"),
                     &params_.get("proj." + column + ".b")};
    return proj.forward(t, x);
}

ReconForward TabRetModel::forward_reconstruct(Tape& t, const Batch& batch, double alpha,
                                              RngState& rng, bool training) {
    const int n = batch.row_count;
    const int k = static_cast<int>(features_.size());
    MaskPlan plan = sample_mask_plan(k, alpha, n, rng);
    Var t_pe = encode_tokens_(t, batch, plan, rng, training);
    const int k_total = static_cast<int>(slot_columns().size());

    ReconForward out;
    out.plan = plan;
    for (int j = 0; j < k; ++j) {
        bool any_masked = false;
        for (int r = 0; r < n && !any_masked; ++r) any_masked = plan.is_masked(r, j);
        if (!any_masked) continue;
        out.predictions[features_[j].name] =
            project_slot_(t, t_pe, j, k_total, n, features_[j].name);
    }
    return out;
}

Var TabRetModel::forward_target(Tape& t, const Batch& batch, RngState& rng,
                                bool training) {
    if (!schema_.target) throw ValidationError("model schema has no target");
    const int n = batch.row_count;
    const int k = static_cast<int>(features_.size());
    MaskPlan plan = empty_mask_plan(k, n);
    Var t_pe = encode_tokens_(t, batch, plan, rng, training);
    const int k_total = static_cast<int>(slot_columns().size());
    // target occupies the last slot and is always fed [MASK]
    return project_slot_(t, t_pe, k_total - 1, k_total, n, *schema_.target);
}

Matrix TabRetModel::predict_target(const Batch& batch) {
    Tape t;
    RngState rng(0);
    Var logits = forward_target(t, batch, rng, /*training=*/false);
    return t.value(logits);
}

}  // namespace tabret
