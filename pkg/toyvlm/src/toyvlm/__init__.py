"""Desk-scale harness around grouped point clouds and a tiny decoder.

The pipeline: read a 6-channel cloud file, group it (farthest-point centers,
nearest-neighbor members), encode three feature granularities, project and
interleave them with learnable prompt tokens, and train a small causal LM on
the question/answer text in two freeze-scheduled stages. Predictions are
written in the line-delimited format the companion scoring tools read.
"""

from .ablation import TrialResult, count_wins, make_orientation_clouds, run_ablation, run_trial
from .errors import (
    BadHeader,
    BadMagic,
    DimensionMismatch,
    InvalidPayload,
    MissingCheckpoint,
    PlanViolation,
    TooFewPoints,
    ToyVlmError,
    Truncated,
)
from .gradcheck import grad_check
from .grouping import PointGroups, group_points
from .iospc import CloudFile, read_iospc, read_iospc_bytes
from .model import (
    EncoderFeatures,
    FusionLayout,
    LossResult,
    ModelConfig,
    PointGroupEncoder,
    PreparedSample,
    ToyVlm,
    parameter_groups,
    prepare_sample,
)
from .training import (
    StagePlan,
    TrainReport,
    load_checkpoint,
    save_checkpoint,
    save_report,
    stage1_plan,
    stage2_plan,
    train_stage,
)
from .vqadata import VqaRow, WordVocab, answer_text, read_vqa_rows, write_predictions

__version__ = "0.1.0"

__all__ = [
    "BadHeader",
    "BadMagic",
    "CloudFile",
    "DimensionMismatch",
    "EncoderFeatures",
    "FusionLayout",
    "InvalidPayload",
    "LossResult",
    "MissingCheckpoint",
    "ModelConfig",
    "PlanViolation",
    "PointGroupEncoder",
    "PointGroups",
    "PreparedSample",
    "StagePlan",
    "TooFewPoints",
    "ToyVlm",
    "ToyVlmError",
    "TrainReport",
    "TrialResult",
    "Truncated",
    "VqaRow",
    "WordVocab",
    "answer_text",
    "count_wins",
    "grad_check",
    "group_points",
    "load_checkpoint",
    "make_orientation_clouds",
    "parameter_groups",
    "prepare_sample",
    "read_iospc",
    "read_iospc_bytes",
    "read_vqa_rows",
    "run_ablation",
    "run_trial",
    "save_checkpoint",
    "save_report",
    "stage1_plan",
    "stage2_plan",
    "train_stage",
    "write_predictions",
]
