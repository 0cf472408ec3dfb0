"""Masked tabular autoencoder with cross-schema transfer."""

from tabret._core import (  # noqa: F401
    ColumnKind,
    ColumnSpec,
    DataError,
    Dataset,
    EpochRecord,
    Model,
    ModelConfig,
    NumericalError,
    Phase,
    PhaseConfig,
    PreprocessorState,
    SplitResult,
    SyntheticResult,
    SyntheticSpec,
    TableSchema,
    TrainResult,
    ValidationError,
    apply_preprocessor,
    fit_preprocessor,
    generate_synthetic,
    gradcheck_tiny_model,
    load_checkpoint,
    load_csv,
    predict_positive_scores,
    roc_auc,
    run_finetuning,
    run_pretraining,
    run_retokenizing,
    save_checkpoint,
    save_csv,
    split_dataset,
    welch_t,
)

__all__ = [
    "ColumnKind",
    "ColumnSpec",
    "DataError",
    "Dataset",
    "EpochRecord",
    "Model",
    "ModelConfig",
    "NumericalError",
    "Phase",
    "PhaseConfig",
    "PreprocessorState",
    "SplitResult",
    "SyntheticResult",
    "SyntheticSpec",
    "TableSchema",
    "TrainResult",
    "ValidationError",
    "apply_preprocessor",
    "fit_preprocessor",
    "generate_synthetic",
    "gradcheck_tiny_model",
    "load_checkpoint",
    "load_csv",
    "predict_positive_scores",
    "roc_auc",
    "run_finetuning",
    "run_pretraining",
    "run_retokenizing",
    "save_checkpoint",
    "save_csv",
    "split_dataset",
    "welch_t",
]
