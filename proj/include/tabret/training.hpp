#pragma once

#include <optional>
#include <vector>

#include "tabret/model.hpp"

namespace tabret {

struct PhaseConfig {
    Phase phase = Phase::Pretrain;
    int epochs = 1000;
    int batch_size = 4096;
    double base_lr = 1.5e-5;
    int warmup_epochs = 40;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double mask_ratio = 0.7;
    double shuffle_ratio = 0.1;  // pre-training only
    int early_stop_patience = 20;

    static PhaseConfig defaults(Phase p);
    void validate() const;
};

struct ShuffleRecord {
    std::vector<int> shuffled_columns;                  // feature indices
    std::vector<std::vector<int>> permutations;         // one per shuffled column
    bool is_shuffled(int col) const;
};

// Permutes floor(beta*k) feature columns of the batch in place.
ShuffleRecord shuffle_augment(Batch& batch, const std::vector<ColumnSpec>& features,
                              double beta, RngState& rng);

// Masked-and-unshuffled reconstruction loss, per-row feature sums averaged over
// the batch. Returns nullopt when no row has an eligible feature.
std::optional<Var> reconstruction_loss(Tape& t, const ReconForward& fwd,
                                       const Batch& batch,
                                       const std::vector<ColumnSpec>& features,
                                       const ShuffleRecord* record = nullptr);

// Mean target loss: cross-entropy (categorical) or squared error (numerical).
Var target_loss(Tape& t, Var prediction, const Batch& batch, const ColumnSpec& target);

// Warmup-cosine schedule with the linear scaling rule lr = base*batch/256.
double lr_at(long step, long total_steps, long warmup_steps, double base_lr,
             int batch_size);

class AdamW {
public:
    AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}
    explicit AdamW(const PhaseConfig& c) : AdamW(c.beta1, c.beta2, c.weight_decay) {}

    // Applies one update to trainable parameters and clears all gradients.
    // Steps with a non-finite gradient are skipped and counted.
    void step(ParamStore& params, double lr);
    int skipped_steps() const { return skipped_; }

private:
    double beta1_, beta2_, weight_decay_, eps_;
    int t_ = 0;
    int skipped_ = 0;
    std::map<std::string, std::pair<Matrix, Matrix>> state_;  // m, v
};

struct EpochRecord {
    int epoch = 0;
    Phase phase = Phase::Pretrain;
    double train_loss = 0.0;
    double val_metric = 0.0;
    double lr = 0.0;
    std::string to_json_line() const;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    double best_val = 0.0;
    int adamw_skipped = 0;
};

TrainResult run_pretraining(TabRetModel& model, const Dataset& train,
                            const Dataset& val, const PhaseConfig& config,
                            uint64_t seed);

TrainResult run_retokenizing(TabRetModel& model, const Dataset& train,
                             const Dataset& val, const ColumnAlignment& alignment,
                             const PhaseConfig& config, uint64_t seed);

TrainResult run_finetuning(TabRetModel& model, const Dataset& train,
                           const Dataset& val, const PhaseConfig& config,
                           uint64_t seed);

// Positive-class scores (softmax probability of class 1) for a binary target.
std::vector<double> predict_positive_scores(TabRetModel& model, const Dataset& data,
                                            int batch_size = 256);

}  // namespace tabret
