#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tabret/errors.hpp"
#include "tabret/matrix.hpp"

namespace tabret {

enum class ColumnKind { Numerical, Categorical };

struct ColumnSpec {
    std::string name;
    ColumnKind kind = ColumnKind::Numerical;
    int cardinality = 0;  // categorical only, >= 2
};

struct TableSchema {
    std::vector<ColumnSpec> columns;
    std::optional<std::string> target;

    void validate() const;
    const ColumnSpec* find(const std::string& name) const;
    int index_of(const std::string& name) const;  // -1 if absent
    // Columns excluding the target (the tokenized features).
    std::vector<ColumnSpec> feature_columns() const;
};

// Column-major storage; numerical and categorical columns both keyed by the
// schema column name.
struct Dataset {
    TableSchema schema;
    int row_count = 0;
    std::map<std::string, std::vector<double>> numerical;
    std::map<std::string, std::vector<int>> categorical;
    // Category strings in first-appearance order, for columns loaded from CSV.
    std::map<std::string, std::vector<std::string>> categories;

    void validate() const;
    Dataset select_rows(const std::vector<int>& rows) const;
};

// A materialized minibatch: same column-major layout, small row count.
struct Batch {
    int row_count = 0;
    std::map<std::string, std::vector<double>> numerical;
    std::map<std::string, std::vector<int>> categorical;
};

struct PreprocessorState {
    int n_quantiles = 0;
    // per numerical column: non-decreasing reference quantile values
    std::map<std::string, std::vector<double>> references;
    // per categorical column: category string -> index, first-appearance order
    std::map<std::string, std::vector<std::string>> category_order;

    std::string to_json() const;
    static PreprocessorState from_json(const std::string& text);
};

struct ColumnAlignment {
    std::vector<std::string> overlap;      // in both schemas
    std::vector<std::string> new_columns;  // downstream only
    std::vector<std::string> dropped;      // pretext only
};

struct SplitResult {
    Dataset pretrain, validation, finetune, test;
};

enum class UnseenCategoryPolicy { Error, ReservedIndex };

Dataset load_csv(const std::string& path, const TableSchema& schema,
                 const std::map<std::string, std::vector<std::string>>* category_maps = nullptr,
                 UnseenCategoryPolicy policy = UnseenCategoryPolicy::Error);

void save_csv(const Dataset& data, const std::string& path);

PreprocessorState fit_preprocessor(const Dataset& train, int n_quantiles = 1000);
Dataset apply_preprocessor(const PreprocessorState& state, const Dataset& data);

SplitResult split_dataset(const Dataset& data, uint64_t seed, double test_frac = 0.2,
                          double val_frac = 0.1, int finetune_count = 100);

ColumnAlignment align_schemas(const TableSchema& pretext, const TableSchema& downstream);

std::vector<Batch> make_batches(const Dataset& data, int batch_size, bool shuffle_rows,
                                uint64_t seed);

// Latent-factor synthetic generator for desk-scale transfer experiments.
struct SyntheticSpec {
    int latent_dim = 4;
    int pretext_columns = 10;
    int downstream_columns = 8;
    int overlap = 5;
    double noise = 0.3;
    int pretext_rows = 20000;
    int downstream_rows = 1000;
    // every categorical_every-th column is categorical with this cardinality
    int categorical_every = 3;
    int cardinality = 4;
};

struct SyntheticResult {
    Dataset pretext;
    Dataset downstream;  // schema.target = "label"
};

SyntheticResult generate_synthetic(const SyntheticSpec& spec, uint64_t seed);

std::string schema_to_json_string(const TableSchema& schema);
TableSchema schema_from_json_string(const std::string& text);

}  // namespace tabret
