#include "tabret/training.hpp"

#include <cmath>

#include <json.hpp>

#include "tabret/eval.hpp"

namespace tabret {

PhaseConfig PhaseConfig::defaults(Phase p) {
    PhaseConfig c;
    c.phase = p;
    switch (p) {
        case Phase::Pretrain:
            c.epochs = 1000;
            c.batch_size = 4096;
            c.base_lr = 1.5e-5;
            c.warmup_epochs = 40;
            c.mask_ratio = 0.7;
            c.shuffle_ratio = 0.1;
            break;
        case Phase::Retokenize:
            c.epochs = 200;
            c.batch_size = 32;
            c.base_lr = 1e-3;
            c.warmup_epochs = 5;
            c.mask_ratio = 0.5;
            c.shuffle_ratio = 0.0;
            break;
        case Phase::Finetune:
            c.epochs = 200;
            c.batch_size = 32;
            c.base_lr = 1e-3;
            c.warmup_epochs = 5;
            c.mask_ratio = 0.0;
            c.shuffle_ratio = 0.0;
            break;
    }
    return c;
}

void PhaseConfig::validate() const {
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (base_lr <= 0.0) throw ValidationError("base_lr must be positive");
    if (warmup_epochs < 0) throw ValidationError("warmup_epochs must be >= 0");
    if (mask_ratio < 0.0 || mask_ratio >= 1.0)
        throw ValidationError("mask_ratio must lie in [0,1)");
    if (shuffle_ratio < 0.0 || shuffle_ratio >= 1.0)
        throw ValidationError("shuffle_ratio must lie in [0,1)");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ValidationError("adam betas must lie in [0,1)");
    if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
    if (early_stop_patience < 1) throw ValidationError("patience must be >= 1");
}

bool ShuffleRecord::is_shuffled(int col) const {
    return std::find(shuffled_columns.begin(), shuffled_columns.end(), col) !=
           shuffled_columns.end();
}

ShuffleRecord shuffle_augment(Batch& batch, const std::vector<ColumnSpec>& features,
                              double beta, RngState& rng) {
    if (beta < 0.0 || beta >= 1.0) throw ValidationError("shuffle ratio must lie in [0,1)");
    const int k = static_cast<int>(features.size());
    const int l = static_cast<int>(std::floor(beta * k));
    ShuffleRecord rec;
    if (l == 0) return rec;
    rec.shuffled_columns = rng.choose(l, k);
    for (int j : rec.shuffled_columns) {
        std::vector<int> perm(batch.row_count);
        for (int i = 0; i < batch.row_count; ++i) perm[i] = i;
        rng.shuffle(perm);
        const ColumnSpec& c = features[j];
        if (c.kind == ColumnKind::Numerical) {
            auto& col = batch.numerical.at(c.name);
            std::vector<double> shuffled(col.size());
            for (size_t i = 0; i < col.size(); ++i) shuffled[i] = col[perm[i]];
            col = std::move(shuffled);
        } else {
            auto& col = batch.categorical.at(c.name);
            std::vector<int> shuffled(col.size());
            for (size_t i = 0; i < col.size(); ++i) shuffled[i] = col[perm[i]];
            col = std::move(shuffled);
        }
        rec.permutations.push_back(std::move(perm));
    }
    return rec;
}

std::optional<Var> reconstruction_loss(Tape& t, const ReconForward& fwd,
                                       const Batch& batch,
                                       const std::vector<ColumnSpec>& features,
                                       const ShuffleRecord* record) {
    const int n = batch.row_count;
    std::optional<Var> total;
    long eligible = 0;
    for (size_t j = 0; j < features.size(); ++j) {
        const ColumnSpec& c = features[j];
        if (record && record->is_shuffled(static_cast<int>(j))) continue;
        auto pit = fwd.predictions.find(c.name);
        if (pit == fwd.predictions.end()) continue;
        std::vector<double> w(n, 0.0);
        long col_count = 0;
        for (int r = 0; r < n; ++r) {
            if (fwd.plan.is_masked(r, static_cast<int>(j))) {
                w[r] = 1.0;
                ++col_count;
            }
        }
        if (col_count == 0) continue;
        eligible += col_count;
        Var per_row;
        if (c.kind == ColumnKind::Numerical) {
            per_row = op_squared_error(t, pit->second, batch.numerical.at(c.name));
        } else {
            per_row = op_cross_entropy(t, pit->second, batch.categorical.at(c.name));
        }
        Var col_sum = op_weighted_sum(t, per_row, std::move(w));
        total = total ? op_add(t, *total, col_sum) : col_sum;
    }
    if (eligible == 0) return std::nullopt;
    return op_scale(t, *total, 1.0 / n);
}

Var target_loss(Tape& t, Var prediction, const Batch& batch, const ColumnSpec& target) {
    const int n = batch.row_count;
    Var per_row;
    if (target.kind == ColumnKind::Numerical) {
        per_row = op_squared_error(t, prediction, batch.numerical.at(target.name));
    } else {
        per_row = op_cross_entropy(t, prediction, batch.categorical.at(target.name));
    }
    return op_scale(t, op_weighted_sum(t, per_row, std::vector<double>(n, 1.0)),
                    1.0 / n);
}

double lr_at(long step, long total_steps, long warmup_steps, double base_lr,
             int batch_size) {
    if (step < 0 || step >= total_steps) throw ValidationError("step out of range");
    if (warmup_steps >= total_steps) throw ValidationError("warmup exceeds total steps");
    const double peak = base_lr * batch_size / 256.0;
    if (step < warmup_steps)
        return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps == warmup_steps + 1) return peak;
    double progress = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(total_steps - 1 - warmup_steps);
    return peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void AdamW::step(ParamStore& params, double lr) {
    for (auto& [name, p] : params) {
        if (!p.trainable) continue;
        if (!p.grad.all_finite()) {
            ++skipped_;
            params.zero_grads();
            return;
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, p] : params) {
        if (!p.trainable) continue;
        auto& [m, v] = state_.try_emplace(name,
                                          std::pair{Matrix(p.value.rows, p.value.cols),
                                                    Matrix(p.value.rows, p.value.cols)})
                           .first->second;
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            const double g = p.grad.data[i];
            m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * g;
            v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * g * g;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.value.data[i] -=
                lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.value.data[i]);
        }
    }
    params.zero_grads();
}

std::string EpochRecord::to_json_line() const {
    nlohmann::json j{{"epoch", epoch},
                     {"phase", phase_name(phase)},
                     {"train_loss", train_loss},
                     {"val_metric", val_metric},
                     {"lr", lr}};
    return j.dump();
}

namespace {

std::map<std::string, Matrix> snapshot_params(const ParamStore& params) {
    std::map<std::string, Matrix> out;
    for (const auto& [name, p] : params) out.emplace(name, p.value);
    return out;
}

void restore_params(ParamStore& params, const std::map<std::string, Matrix>& snap) {
    for (auto& [name, p] : params) p.value = snap.at(name);
}

double eval_recon_loss(TabRetModel& model, const Dataset& data,
                       const PhaseConfig& cfg, RngState rng) {
    auto batches = make_batches(data, cfg.batch_size, false, 0);
    double total = 0.0;
    long rows = 0;
    for (auto& b : batches) {
        Tape t;
        ReconForward fwd =
            model.forward_reconstruct(t, b, cfg.mask_ratio, rng, /*training=*/false);
        auto loss = reconstruction_loss(t, fwd, b, model.feature_columns(), nullptr);
        if (!loss) continue;
        total += t.value(*loss)(0, 0) * b.row_count;
        rows += b.row_count;
    }
    return rows > 0 ? total / rows : 0.0;
}

// Shared masked-autoencoding loop for pre-training and retokenizing.
TrainResult run_masked_phase(TabRetModel& model, const Dataset& train,
                             const Dataset& val, const PhaseConfig& cfg,
                             uint64_t seed, bool with_shuffle) {
    cfg.validate();
    TrainResult res;
    const long spe = (train.row_count + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = std::max<long>(1, cfg.epochs * spe);
    const long warmup_steps = cfg.warmup_epochs * spe;

    RngState phase_rng = RngState(seed).split(phase_name(cfg.phase));
    AdamW opt(cfg);
    double best = 1e300;
    auto best_snap = snapshot_params(model.params());
    int bad_epochs = 0;
    long gstep = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        uint64_t order_seed = phase_rng.split("order" + std::to_string(epoch)).next_u64();
        auto batches = make_batches(train, cfg.batch_size, true, order_seed);
        double train_loss = 0.0;
        long rows = 0;
        double last_lr = 0.0;
        for (auto& b : batches) {
            ShuffleRecord rec;
            if (with_shuffle && cfg.shuffle_ratio > 0.0)
                rec = shuffle_augment(b, model.feature_columns(), cfg.shuffle_ratio,
                                      phase_rng);
            Tape t;
            ReconForward fwd = model.forward_reconstruct(t, b, cfg.mask_ratio,
                                                         phase_rng, /*training=*/true);
            auto loss = reconstruction_loss(t, fwd, b, model.feature_columns(),
                                            with_shuffle ? &rec : nullptr);
            last_lr = lr_at(std::min(gstep, total_steps - 1), total_steps, warmup_steps,
                            cfg.base_lr, cfg.batch_size);
            ++gstep;
            if (!loss) continue;
            double lv = t.value(*loss)(0, 0);
            if (!std::isfinite(lv))
                throw NumericalError("training loss diverged at epoch " +
                                     std::to_string(epoch));
            t.backward(*loss);
            opt.step(model.params(), last_lr);
            train_loss += lv * b.row_count;
            rows += b.row_count;
        }
        double val_loss = eval_recon_loss(
            model, val, cfg, phase_rng.split("val" + std::to_string(epoch)));
        res.history.push_back(EpochRecord{epoch, cfg.phase,
                                          rows ? train_loss / rows : 0.0, val_loss,
                                          last_lr});
        if (val_loss < best) {
            best = val_loss;
            best_snap = snapshot_params(model.params());
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs >= cfg.early_stop_patience) break;
        }
    }
    if (cfg.epochs > 0) restore_params(model.params(), best_snap);
    res.best_val = best;
    res.adamw_skipped = opt.skipped_steps();
    return res;
}

}  // namespace

TrainResult run_pretraining(TabRetModel& model, const Dataset& train,
                            const Dataset& val, const PhaseConfig& config,
                            uint64_t seed) {
    if (config.phase != Phase::Pretrain)
        throw ValidationError("config.phase must be pretrain");
    model.set_trainable(Phase::Pretrain);
    return run_masked_phase(model, train, val, config, seed, /*with_shuffle=*/true);
}

TrainResult run_retokenizing(TabRetModel& model, const Dataset& train,
                             const Dataset& val, const ColumnAlignment& alignment,
                             const PhaseConfig& config, uint64_t seed) {
    if (config.phase != Phase::Retokenize)
        throw ValidationError("config.phase must be retokenize");
    if (alignment.new_columns.empty()) return TrainResult{};  // nothing to train
    model.set_trainable(Phase::Retokenize, alignment.new_columns);
    return run_masked_phase(model, train, val, config, seed, /*with_shuffle=*/false);
}

TrainResult run_finetuning(TabRetModel& model, const Dataset& train,
                           const Dataset& val, const PhaseConfig& config,
                           uint64_t seed) {
    if (config.phase != Phase::Finetune)
        throw ValidationError("config.phase must be finetune");
    config.validate();
    if (!model.schema().target) throw ValidationError("fine-tuning needs a target");
    const ColumnSpec target = *model.schema().find(*model.schema().target);
    model.set_trainable(Phase::Finetune);

    TrainResult res;
    const long spe = (train.row_count + config.batch_size - 1) / config.batch_size;
    const long total_steps = std::max<long>(1, config.epochs * spe);
    const long warmup_steps = config.warmup_epochs * spe;

    RngState phase_rng = RngState(seed).split("finetune");
    AdamW opt(config);
    double best = -1.0;
    auto best_snap = snapshot_params(model.params());
    int bad_epochs = 0;
    long gstep = 0;

    std::vector<int> val_labels;
    if (target.kind == ColumnKind::Categorical)
        val_labels = val.categorical.at(target.name);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        uint64_t order_seed =
            phase_rng.split("order" + std::to_string(epoch)).next_u64();
        auto batches = make_batches(train, config.batch_size, true, order_seed);
        double train_loss = 0.0;
        long rows = 0;
        double last_lr = 0.0;
        for (auto& b : batches) {
            Tape t;
            Var pred = model.forward_target(t, b, phase_rng, /*training=*/true);
            Var loss = target_loss(t, pred, b, target);
            double lv = t.value(loss)(0, 0);
            if (!std::isfinite(lv))
                throw NumericalError("fine-tuning loss diverged at epoch " +
                                     std::to_string(epoch));
            last_lr = lr_at(std::min(gstep, total_steps - 1), total_steps, warmup_steps,
                            config.base_lr, config.batch_size);
            ++gstep;
            t.backward(loss);
            opt.step(model.params(), last_lr);
            train_loss += lv * b.row_count;
            rows += b.row_count;
        }
        double val_auc = 0.5;
        if (!val_labels.empty()) {
            auto scores = predict_positive_scores(model, val, config.batch_size);
            bool both = std::count(val_labels.begin(), val_labels.end(), 1) > 0 &&
                        std::count(val_labels.begin(), val_labels.end(), 0) > 0;
            val_auc = both ? roc_auc(scores, val_labels) : 0.5;
        }
        res.history.push_back(EpochRecord{epoch, Phase::Finetune,
                                          rows ? train_loss / rows : 0.0, val_auc,
                                          last_lr});
        if (val_auc > best) {
            best = val_auc;
            best_snap = snapshot_params(model.params());
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs >= config.early_stop_patience) break;
        }
    }
    if (config.epochs > 0) restore_params(model.params(), best_snap);
    res.best_val = best;
    res.adamw_skipped = opt.skipped_steps();
    return res;
}

std::vector<double> predict_positive_scores(TabRetModel& model, const Dataset& data,
                                            int batch_size) {
    auto batches = make_batches(data, batch_size, false, 0);
    std::vector<double> scores;
    scores.reserve(data.row_count);
    for (const auto& b : batches) {
        Matrix logits = model.predict_target(b);
        if (logits.cols < 2) throw ValidationError("target is not binary categorical");
        Matrix probs = softmax_rows(logits);
        for (int r = 0; r < probs.rows; ++r) scores.push_back(probs(r, 1));
    }
    return scores;
}

}  // namespace tabret
