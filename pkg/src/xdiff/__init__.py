"""Exact interaction detection and salience for small neural networks.

Forward-mode automatic differentiation over a subset lattice gives exact
mixed partial derivatives of trained models; on top of that sit an
interaction detector for tabular models, a salience-tensor generalization
of gradient-times-input attribution for grid inputs, a synthetic
benchmark suite with analytic ground truth, and ranking evaluation.
"""

from .autodiff import (
    CapacityError,
    CrossDual,
    DomainError,
    MAX_TAGS,
    SingularityError,
    TagMismatchError,
    cross_partial,
    fd_oracle,
)
from .benchmarks import (
    FUNCTIONS,
    GroundTruth,
    SynthFunction,
    eval_function,
    get_function,
    ground_truth,
    pairwise_truth,
    sample_dataset,
)
from .detect import (
    ActivationError,
    DetectConfig,
    InteractionRanking,
    Representative,
    SweepRow,
    aggregation_sweep,
    binned_mode,
    detect,
    local_ies,
    representative_samples,
    verify_extension_schedule,
)
from .evaluate import (
    AucReport,
    UndefinedAucError,
    auc,
    default_pipeline,
    mean_truth_auc,
    pair_scores,
    pairwise_suite,
    relative_higher_order,
    truth_auc_per_order,
)
from .mlp import (
    Dataset,
    Mlp,
    MlpConfig,
    Normalizer,
    TrainConfig,
    TrainingError,
    TrainingReport,
    forward,
    gelu,
    load_csv,
    load_model,
    normalize,
    save_csv,
    save_model,
    train,
)
from .salience import (
    CamOptions,
    FeatureGrid,
    SalienceTensor,
    grad_cam,
    hessian_cam,
    render_heatmap,
    symmetrize,
    taylor_cam,
    top_interactions,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationError",
    "AucReport",
    "CamOptions",
    "CapacityError",
    "CrossDual",
    "Dataset",
    "DetectConfig",
    "DomainError",
    "FUNCTIONS",
    "FeatureGrid",
    "GroundTruth",
    "InteractionRanking",
    "MAX_TAGS",
    "Mlp",
    "MlpConfig",
    "Normalizer",
    "Representative",
    "SalienceTensor",
    "SingularityError",
    "SweepRow",
    "SynthFunction",
    "TagMismatchError",
    "TrainConfig",
    "TrainingError",
    "TrainingReport",
    "UndefinedAucError",
    "aggregation_sweep",
    "auc",
    "binned_mode",
    "cross_partial",
    "default_pipeline",
    "detect",
    "eval_function",
    "fd_oracle",
    "forward",
    "gelu",
    "get_function",
    "grad_cam",
    "ground_truth",
    "hessian_cam",
    "load_csv",
    "load_model",
    "local_ies",
    "mean_truth_auc",
    "normalize",
    "pair_scores",
    "pairwise_suite",
    "pairwise_truth",
    "relative_higher_order",
    "render_heatmap",
    "representative_samples",
    "sample_dataset",
    "save_csv",
    "save_model",
    "symmetrize",
    "taylor_cam",
    "top_interactions",
    "train",
    "truth_auc_per_order",
    "verify_extension_schedule",
]
