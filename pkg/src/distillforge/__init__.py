"""distillforge: distill black-box probabilistic models into CPU-fast
tabular students with leakage-aware soft labeling."""

from .baselines import LogRegModel, fit_logreg
from .bench import LatencyReport, measure, nearest_rank_p99
from .dataset import (
    ColumnSpec,
    Dataset,
    DatasetError,
    FeatureEncoder,
    FoldAssignment,
    Schema,
    SynthSpec,
    encode_dataset,
    impute,
    load_csv,
    stratified_kfold,
    synth_generate,
    train_test_split,
)
from .distill import (
    DistillTargets,
    LossConfig,
    adaptive_temperature,
    build_targets,
    confidence_weight,
    mixed_loss,
    normalized_entropy,
)
from .gbdt import BoostedModel, GbdtConfig, fit_distilled, fit_hard
from .metrics import (
    EvalReport,
    auc,
    brier,
    dp_diff,
    ece,
    eo_diff,
    evaluate,
    fit_temperature,
    macro_auc,
    retention,
    scale_probs,
)
from .mlp import MlpModel, TrainSchedule, collapse_check, fit_mlp
from .pipeline import (
    ConfigError,
    RunConfig,
    StudentArtifact,
    run_ablation,
    run_pipeline,
)
from .stats import WilcoxonResult, wilcoxon_signed_rank
from .teacher import (
    LeakageError,
    SoftLabelSet,
    TeacherSpec,
    average_labels,
    export_soft_labels,
    import_soft_labels,
    leakage_audit,
    oof_label,
)

__version__ = "0.1.0"

__all__ = [
    "BoostedModel",
    "ColumnSpec",
    "ConfigError",
    "Dataset",
    "DatasetError",
    "DistillTargets",
    "EvalReport",
    "FeatureEncoder",
    "FoldAssignment",
    "GbdtConfig",
    "LatencyReport",
    "LeakageError",
    "LogRegModel",
    "LossConfig",
    "MlpModel",
    "RunConfig",
    "Schema",
    "SoftLabelSet",
    "StudentArtifact",
    "SynthSpec",
    "TeacherSpec",
    "TrainSchedule",
    "WilcoxonResult",
    "adaptive_temperature",
    "auc",
    "average_labels",
    "brier",
    "build_targets",
    "collapse_check",
    "confidence_weight",
    "dp_diff",
    "ece",
    "encode_dataset",
    "eo_diff",
    "evaluate",
    "export_soft_labels",
    "fit_distilled",
    "fit_hard",
    "fit_logreg",
    "fit_mlp",
    "fit_temperature",
    "impute",
    "import_soft_labels",
    "leakage_audit",
    "load_csv",
    "macro_auc",
    "measure",
    "mixed_loss",
    "nearest_rank_p99",
    "normalized_entropy",
    "oof_label",
    "retention",
    "run_ablation",
    "run_pipeline",
    "scale_probs",
    "stratified_kfold",
    "synth_generate",
    "train_test_split",
    "wilcoxon_signed_rank",
]
