#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tabret/data.hpp"
#include "tabret/nn.hpp"

namespace tabret {

enum class Phase { Pretrain, Retokenize, Finetune };

std::string phase_name(Phase p);
Phase phase_from_name(const std::string& s);

struct TabRetConfig {
    int n_blocks = 6;
    int d_token = 0;  // 0 -> looked up from n_blocks
    int n_heads = 8;
    double ffn_size_factor = 4.0 / 3.0;
    double attn_dropout = 0.1;
    double ffn_dropout = 0.1;  // encoder FFN dropout
    double residual_dropout = 0.0;
    int d_pe = 0;  // 0 -> token_dim()
    double ln_eps = 1e-5;

    static int token_size_for(int n_blocks);
    int token_dim() const { return d_token > 0 ? d_token : token_size_for(n_blocks); }
    int pe_dim() const { return d_pe > 0 ? d_pe : token_dim(); }
    void validate() const;
};

// Per-row masked column indices over the k tokenized columns.
struct MaskPlan {
    int k = 0;
    std::vector<std::vector<int>> masked;  // sorted per row
    std::vector<std::vector<int>> kept;    // sorted per row

    int masked_per_row() const { return masked.empty() ? 0 : (int)masked[0].size(); }
    bool is_masked(int row, int col) const;
};

MaskPlan sample_mask_plan(int k, double alpha, int n_rows, RngState& rng);
MaskPlan empty_mask_plan(int k, int n_rows);

struct ReconForward {
    // per feature column: n x 1 (numerical) or n x C (categorical) predictions
    std::map<std::string, Var> predictions;
    MaskPlan plan;
};

class TabRetModel {
public:
    TabRetModel(TableSchema schema, TabRetConfig cfg, RngState& rng);

    // Layer views hold pointers into the parameter store; moving keeps map
    // nodes alive, copying would not.
    TabRetModel(const TabRetModel&) = delete;
    TabRetModel& operator=(const TabRetModel&) = delete;
    TabRetModel(TabRetModel&&) = default;
    TabRetModel& operator=(TabRetModel&&) = default;

    const TableSchema& schema() const { return schema_; }
    const TabRetConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const std::vector<ColumnSpec>& feature_columns() const { return features_; }

    // Adds tokenizer + positional embedding + projector for each new column.
    // The target column gets no tokenizer.
    void extend_for_columns(const std::vector<ColumnSpec>& new_columns, RngState& rng);

    // Target column gets a positional embedding and projector, no tokenizer.
    void extend_for_target(const ColumnSpec& target, RngState& rng);

    // Rebinds the model to a downstream schema. Every column must already
    // have its positional embedding and projector (via init or extend).
    void bind_schema(TableSchema schema);

    void set_trainable(Phase phase, const std::vector<std::string>& new_columns = {});

    // Masked-reconstruction forward (pre-training / retokenizing).
    ReconForward forward_reconstruct(Tape& t, const Batch& batch, double alpha,
                                     RngState& rng, bool training);

    // Fine-tuning / inference forward: no masking, target slot fed [MASK].
    Var forward_target(Tape& t, const Batch& batch, RngState& rng, bool training);

    // Eval-mode target logits (no gradients kept by the caller).
    Matrix predict_target(const Batch& batch);

    // Post-encoder slot order: feature columns then the target (if any).
    std::vector<std::string> slot_columns() const;

    // Rebuild internal layer views from the parameter store (used after
    // checkpoint load).
    void rebuild_views();

    static std::vector<std::string> column_param_names(const ColumnSpec& c,
                                                       bool with_tokenizer);

private:
    Var encode_tokens_(Tape& t, const Batch& batch, const MaskPlan& plan,
                       RngState& rng, bool training);
    Var project_slot_(Tape& t, Var t_pe, int slot, int k_total, int n,
                      const std::string& column);

    TableSchema schema_;
    std::vector<ColumnSpec> features_;
    TabRetConfig cfg_;
    ParamStore params_;

    LayerNormLayer align_ln_;
    LinearLayer align_linear_;
    std::vector<TransformerBlock> enc_blocks_;
    LayerNormLayer enc_ln_;
    LinearLayer post_linear_;
    TransformerBlock post_block_;
    LayerNormLayer post_ln_;
};

}  // namespace tabret
