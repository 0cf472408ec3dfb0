#include "tabret/diagnostics.hpp"

#include <cmath>
#include <functional>

#include "tabret/training.hpp"

namespace tabret {

namespace {

Batch make_batch(const TableSchema& schema, int n, RngState& rng) {
    Batch b;
    b.row_count = n;
    for (const auto& c : schema.columns) {
        if (c.kind == ColumnKind::Numerical) {
            auto& col = b.numerical[c.name];
            for (int i = 0; i < n; ++i) col.push_back(rng.uniform());
        } else {
            auto& col = b.categorical[c.name];
            for (int i = 0; i < n; ++i) col.push_back(rng.uniform_int(c.cardinality));
        }
    }
    return b;
}

// Checks every trainable scalar of `params` for one deterministic loss.
void check_loss(ParamStore& params, const std::function<double(bool)>& loss,
                double eps, GradCheckReport& report) {
    params.zero_grads();
    loss(true);
    for (auto& [name, p] : params) {
        if (!p.trainable) continue;
        double worst = 0.0;
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
            worst = std::max(worst, std::fabs(analytic - numeric) / denom);
        }
        auto [it, fresh] = report.per_param.try_emplace(name, worst);
        if (!fresh) it->second = std::max(it->second, worst);
        if (worst > report.max_rel_error) {
            report.max_rel_error = worst;
            report.worst_param = name;
        }
    }
    params.zero_grads();
}

}  // namespace

GradCheckReport gradcheck_tiny_model(double eps, uint64_t seed) {
    TableSchema schema;
    schema.columns = {{"n0", ColumnKind::Numerical, 0},
                      {"n1", ColumnKind::Numerical, 0},
                      {"c0", ColumnKind::Categorical, 3},
                      {"c1", ColumnKind::Categorical, 3},
                      {"y", ColumnKind::Categorical, 2}};
    schema.target = "y";

    TabRetConfig cfg;
    cfg.n_blocks = 1;
    cfg.d_token = 8;
    cfg.n_heads = 8;
    cfg.attn_dropout = 0.0;
    cfg.ffn_dropout = 0.0;
    cfg.residual_dropout = 0.0;

    RngState rng(seed);
    RngState init_rng = rng.split("init");
    TabRetModel model(schema, cfg, init_rng);
    model.set_trainable(Phase::Pretrain);

    RngState batch_rng = rng.split("batch");
    Batch batch = make_batch(schema, 5, batch_rng);

    GradCheckReport report;

    auto recon_loss = [&](bool with_grad) {
        Tape t;
        RngState fwd_rng = rng.split("mask");  // same plan on every call
        ReconForward fwd =
            model.forward_reconstruct(t, batch, 0.5, fwd_rng, /*training=*/false);
        auto loss = reconstruction_loss(t, fwd, batch, model.feature_columns());
        double lv = t.value(*loss)(0, 0);
        if (!std::isfinite(lv)) throw NumericalError("non-finite reconstruction loss");
        if (with_grad) t.backward(*loss);
        return lv;
    };
    check_loss(model.params(), recon_loss, eps, report);

    auto tgt_loss = [&](bool with_grad) {
        Tape t;
        RngState fwd_rng = rng.split("target");
        Var pred = model.forward_target(t, batch, fwd_rng, /*training=*/false);
        Var loss = target_loss(t, pred, batch, *schema.find("y"));
        double lv = t.value(loss)(0, 0);
        if (!std::isfinite(lv)) throw NumericalError("non-finite target loss");
        if (with_grad) t.backward(loss);
        return lv;
    };
    check_loss(model.params(), tgt_loss, eps, report);

    return report;
}

}  // namespace tabret
