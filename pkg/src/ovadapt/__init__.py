"""One-vs-all open-set classifiers for universal domain adaptation.

A labeled source domain trains a closed-set head plus one two-output
open-set head per class (hard-negative sampling picks which heads each
sample updates); unlabeled target data adapts the heads via open-set
entropy minimization. The known/unknown boundary is the heads' own softmax
midpoint, learned from source data rather than hand-tuned.
"""

from .data import (
    CategoryShiftSpec,
    Dataset,
    SynthConfig,
    batch_iter,
    generate_synthetic,
    load_feature_file,
    make_category_shift,
    map_to_eval_labels,
    save_feature_file,
)
from .evaluate import (
    MetricsReport,
    PredictionOutcome,
    auroc,
    baseline_scores,
    compute_metrics,
    emit_histogram,
    h_score,
    predict,
    predict_fixed_ratio,
)
from .losses import (
    LossValue,
    TotalObjective,
    closed_loss,
    oem_loss,
    oem_loss_batch,
    ova_loss_batch,
    ova_loss_hncs,
    total_objective,
)
from .model import (
    ForwardResult,
    ModelParams,
    ModelSpec,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .numerics import finite_diff_grad, root_rng, softmax, substream
from .trainer import (
    GradCheckReport,
    NumericError,
    TrainConfig,
    TrainHistory,
    gradient_check,
    lr_schedule,
    train,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "CategoryShiftSpec",
    "Dataset",
    "ForwardResult",
    "GradCheckReport",
    "LossValue",
    "MetricsReport",
    "ModelParams",
    "ModelSpec",
    "NumericError",
    "PredictionOutcome",
    "SynthConfig",
    "TotalObjective",
    "TrainConfig",
    "TrainHistory",
    "auroc",
    "baseline_scores",
    "batch_iter",
    "closed_loss",
    "compute_metrics",
    "emit_histogram",
    "finite_diff_grad",
    "forward",
    "generate_synthetic",
    "gradient_check",
    "h_score",
    "init_model",
    "load_checkpoint",
    "load_feature_file",
    "lr_schedule",
    "make_category_shift",
    "map_to_eval_labels",
    "oem_loss",
    "oem_loss_batch",
    "ova_loss_batch",
    "ova_loss_hncs",
    "predict",
    "predict_fixed_ratio",
    "root_rng",
    "save_checkpoint",
    "save_feature_file",
    "softmax",
    "substream",
    "total_objective",
    "train",
    "train_step",
]
