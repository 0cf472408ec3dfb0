// Python bindings for the core pipeline: data generation and loading,
// preprocessing, the three training phases, evaluation, and checkpoints.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tabret/checkpoint.hpp"
#include "tabret/diagnostics.hpp"
#include "tabret/eval.hpp"
#include "tabret/training.hpp"

namespace py = pybind11;
using namespace tabret;

namespace {

std::unique_ptr<TabRetModel> make_model(const TableSchema& schema,
                                        const TabRetConfig& cfg, uint64_t seed) {
    RngState rng = RngState(seed).split("init");
    return std::make_unique<TabRetModel>(schema, cfg, rng);
}

void extend_model(TabRetModel& model, const TableSchema& downstream, uint64_t seed) {
    ColumnAlignment align = align_schemas(model.schema(), downstream);
    RngState rng = RngState(seed).split("extend");
    std::vector<ColumnSpec> specs;
    for (const auto& name : align.new_columns)
        specs.push_back(*downstream.find(name));
    model.extend_for_columns(specs, rng);
    if (downstream.target &&
        !model.params().contains("post.pos." + *downstream.target))
        model.extend_for_target(*downstream.find(*downstream.target), rng);
    model.bind_schema(downstream);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Masked tabular autoencoder with cross-schema transfer";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    py::enum_<ColumnKind>(m, "ColumnKind")
        .value("NUMERICAL", ColumnKind::Numerical)
        .value("CATEGORICAL", ColumnKind::Categorical);

    py::enum_<Phase>(m, "Phase")
        .value("PRETRAIN", Phase::Pretrain)
        .value("RETOKENIZE", Phase::Retokenize)
        .value("FINETUNE", Phase::Finetune);

    py::class_<ColumnSpec>(m, "ColumnSpec")
        .def(py::init<>())
        .def_readwrite("name", &ColumnSpec::name)
        .def_readwrite("kind", &ColumnSpec::kind)
        .def_readwrite("cardinality", &ColumnSpec::cardinality);

    py::class_<TableSchema>(m, "TableSchema")
        .def(py::init<>())
        .def_readwrite("columns", &TableSchema::columns)
        .def_readwrite("target", &TableSchema::target)
        .def("validate", &TableSchema::validate)
        .def("to_json", [](const TableSchema& s) { return schema_to_json_string(s); })
        .def_static("from_json",
                    [](const std::string& text) { return schema_from_json_string(text); });

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("schema", &Dataset::schema)
        .def_readonly("row_count", &Dataset::row_count)
        .def_readonly("numerical", &Dataset::numerical)
        .def_readonly("categorical", &Dataset::categorical)
        .def("select_rows", &Dataset::select_rows);

    py::class_<SplitResult>(m, "SplitResult")
        .def_readonly("pretrain", &SplitResult::pretrain)
        .def_readonly("validation", &SplitResult::validation)
        .def_readonly("finetune", &SplitResult::finetune)
        .def_readonly("test", &SplitResult::test);

    py::class_<PreprocessorState>(m, "PreprocessorState")
        .def("to_json", &PreprocessorState::to_json)
        .def_static("from_json", &PreprocessorState::from_json);

    py::class_<SyntheticSpec>(m, "SyntheticSpec")
        .def(py::init<>())
        .def_readwrite("latent_dim", &SyntheticSpec::latent_dim)
        .def_readwrite("pretext_columns", &SyntheticSpec::pretext_columns)
        .def_readwrite("downstream_columns", &SyntheticSpec::downstream_columns)
        .def_readwrite("overlap", &SyntheticSpec::overlap)
        .def_readwrite("noise", &SyntheticSpec::noise)
        .def_readwrite("pretext_rows", &SyntheticSpec::pretext_rows)
        .def_readwrite("downstream_rows", &SyntheticSpec::downstream_rows)
        .def_readwrite("categorical_every", &SyntheticSpec::categorical_every)
        .def_readwrite("cardinality", &SyntheticSpec::cardinality);

    py::class_<SyntheticResult>(m, "SyntheticResult")
        .def_readonly("pretext", &SyntheticResult::pretext)
        .def_readonly("downstream", &SyntheticResult::downstream);

    m.def("generate_synthetic", &generate_synthetic, py::arg("spec"), py::arg("seed"));
    m.def("load_csv",
          [](const std::string& path, const TableSchema& schema) {
              return load_csv(path, schema);
          },
          py::arg("path"), py::arg("schema"));
    m.def("save_csv", &save_csv, py::arg("data"), py::arg("path"));
    m.def("split_dataset", &split_dataset, py::arg("data"), py::arg("seed"),
          py::arg("test_frac") = 0.2, py::arg("val_frac") = 0.1,
          py::arg("finetune_count") = 100);
    m.def("fit_preprocessor", &fit_preprocessor, py::arg("train"),
          py::arg("n_quantiles") = 1000);
    m.def("apply_preprocessor", &apply_preprocessor, py::arg("state"), py::arg("data"));

    py::class_<TabRetConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_blocks", &TabRetConfig::n_blocks)
        .def_readwrite("d_token", &TabRetConfig::d_token)
        .def_readwrite("n_heads", &TabRetConfig::n_heads)
        .def_readwrite("ffn_size_factor", &TabRetConfig::ffn_size_factor)
        .def_readwrite("attn_dropout", &TabRetConfig::attn_dropout)
        .def_readwrite("ffn_dropout", &TabRetConfig::ffn_dropout)
        .def_readwrite("residual_dropout", &TabRetConfig::residual_dropout)
        .def_readwrite("d_pe", &TabRetConfig::d_pe)
        .def_readwrite("ln_eps", &TabRetConfig::ln_eps)
        .def("token_dim", &TabRetConfig::token_dim)
        .def("validate", &TabRetConfig::validate);

    py::class_<PhaseConfig>(m, "PhaseConfig")
        .def_static("defaults", &PhaseConfig::defaults, py::arg("phase"))
        .def_readwrite("phase", &PhaseConfig::phase)
        .def_readwrite("epochs", &PhaseConfig::epochs)
        .def_readwrite("batch_size", &PhaseConfig::batch_size)
        .def_readwrite("base_lr", &PhaseConfig::base_lr)
        .def_readwrite("warmup_epochs", &PhaseConfig::warmup_epochs)
        .def_readwrite("weight_decay", &PhaseConfig::weight_decay)
        .def_readwrite("beta1", &PhaseConfig::beta1)
        .def_readwrite("beta2", &PhaseConfig::beta2)
        .def_readwrite("mask_ratio", &PhaseConfig::mask_ratio)
        .def_readwrite("shuffle_ratio", &PhaseConfig::shuffle_ratio)
        .def_readwrite("early_stop_patience", &PhaseConfig::early_stop_patience)
        .def("validate", &PhaseConfig::validate);

    py::class_<EpochRecord>(m, "EpochRecord")
        .def_readonly("epoch", &EpochRecord::epoch)
        .def_readonly("train_loss", &EpochRecord::train_loss)
        .def_readonly("val_metric", &EpochRecord::val_metric)
        .def_readonly("lr", &EpochRecord::lr)
        .def("to_json_line", &EpochRecord::to_json_line);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("history", &TrainResult::history)
        .def_readonly("best_val", &TrainResult::best_val);

    py::class_<TabRetModel>(m, "Model")
        .def(py::init(&make_model), py::arg("schema"), py::arg("config"),
             py::arg("seed"))
        .def_property_readonly("schema", &TabRetModel::schema)
        .def("extend_for_schema", &extend_model, py::arg("downstream"), py::arg("seed"),
             "Adds tokenizers/positional embeddings/projectors for downstream "
             "columns the model has not seen, then binds the schema.")
        .def("parameter_names", [](const TabRetModel& model) {
            std::vector<std::string> names;
            for (const auto& [name, p] : model.params()) names.push_back(name);
            return names;
        });

    m.def("run_pretraining", &run_pretraining, py::arg("model"), py::arg("train"),
          py::arg("val"), py::arg("config"), py::arg("seed"));
    m.def("run_retokenizing",
          [](TabRetModel& model, const Dataset& train, const Dataset& val,
             const TableSchema& pretext, const PhaseConfig& config, uint64_t seed) {
              ColumnAlignment align = align_schemas(pretext, model.schema());
              return run_retokenizing(model, train, val, align, config, seed);
          },
          py::arg("model"), py::arg("train"), py::arg("val"), py::arg("pretext_schema"),
          py::arg("config"), py::arg("seed"));
    m.def("run_finetuning", &run_finetuning, py::arg("model"), py::arg("train"),
          py::arg("val"), py::arg("config"), py::arg("seed"));
    m.def("predict_positive_scores", &predict_positive_scores, py::arg("model"),
          py::arg("data"), py::arg("batch_size") = 256);

    m.def("roc_auc", &roc_auc, py::arg("scores"), py::arg("labels"));
    m.def("welch_t", [](const std::vector<double>& a, const std::vector<double>& b) {
        WelchResult r = welch_t(a, b);
        return py::make_tuple(r.t, r.df, r.p);
    }, py::arg("a"), py::arg("b"), "Returns (t, df, two-sided p).");

    m.def("gradcheck_tiny_model",
          [](double eps, uint64_t seed) {
              GradCheckReport r = gradcheck_tiny_model(eps, seed);
              return py::make_tuple(r.max_rel_error, r.worst_param, r.per_param);
          },
          py::arg("eps") = 1e-6, py::arg("seed") = 5,
          "Returns (max_rel_error, worst_param, per_param_errors).");

    m.def("save_checkpoint",
          [](const TabRetModel& model, const std::string& base, uint64_t seed,
             const std::string& precision) {
              CheckpointMeta meta;
              meta.seed = seed;
              meta.precision = precision;
              save_checkpoint(model, meta, base);
          },
          py::arg("model"), py::arg("base_path"), py::arg("seed") = 0,
          py::arg("precision") = "double");
    m.def("load_checkpoint",
          [](const std::string& base) {
              LoadedCheckpoint lc = load_checkpoint(base);
              return std::make_unique<TabRetModel>(std::move(lc.model));
          },
          py::arg("base_path"));
}
