"""Joint body/part detection on dense anchor grids.

Bodies and their parts are predicted as one extended representation:
every anchor slot carries objectness, a box, class scores, and one
2-D offset per part class pointing at the centers of the owning
body's parts. Decoding runs NMS per class and then resolves
body/part pairs by greedy nearest-offset matching.
"""
from .association import (
    Detection,
    InferenceResult,
    PredictedScene,
    Thresholds,
    associate,
    load_predictions,
    nms,
    run_inference,
    save_predictions,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .geometry import BBox, ciou, inner_overlap, iou
from .kernels import IMPLEMENTATION
from .losses import (
    LossBreakdown,
    LossWeights,
    SparseGradient,
    apply_gradient,
    grad_total,
    loss_bpd,
    loss_box,
    loss_cls,
    loss_obj,
    loss_total,
)
from .metrics import (
    EvalReport,
    association_exact,
    association_pr,
    conditional_accuracy,
    evaluate,
    joint_ap,
    mmr2,
    mr2,
    save_curves,
    voc_ap,
)
from .representation import (
    DEFAULT_ANCHORS,
    DEFAULT_STRIDES,
    AssignmentResult,
    Body,
    Dataset,
    GridSpec,
    OrphanPart,
    PartSchema,
    SceneAnnotation,
    TargetAssignment,
    assign_targets,
    decode_box,
    decode_offsets,
    encode_box,
    encode_offsets,
    load_dataset,
    load_grids,
    save_dataset,
    save_grids,
)
from .synthscene import (
    SceneConfig,
    crowded_config,
    face_config,
    five_body_scene,
    one_body_scene,
    generate_scene,
    hands_config,
    oracle_associate,
    oracle_nms,
    perturb_grids,
    render_perfect_grids,
)
from .trainer import OverfitResult, TrainConfig, lambda_sweep, overfit

__version__ = "0.1.0"

__all__ = [
    "AssignmentResult",
    "BBox",
    "Body",
    "ConfigError",
    "DEFAULT_ANCHORS",
    "DEFAULT_STRIDES",
    "Dataset",
    "Detection",
    "EvalReport",
    "GridSpec",
    "IMPLEMENTATION",
    "InferenceResult",
    "LossBreakdown",
    "LossWeights",
    "OrphanPart",
    "OverfitResult",
    "PartSchema",
    "PredictedScene",
    "RunConfig",
    "SceneAnnotation",
    "SceneConfig",
    "SparseGradient",
    "TargetAssignment",
    "Thresholds",
    "TrainConfig",
    "apply_gradient",
    "assign_targets",
    "associate",
    "association_exact",
    "association_pr",
    "ciou",
    "conditional_accuracy",
    "crowded_config",
    "decode_box",
    "decode_offsets",
    "encode_box",
    "encode_offsets",
    "evaluate",
    "face_config",
    "five_body_scene",
    "generate_scene",
    "grad_total",
    "hands_config",
    "inner_overlap",
    "iou",
    "joint_ap",
    "lambda_sweep",
    "load_config",
    "load_dataset",
    "load_grids",
    "load_predictions",
    "loss_box",
    "loss_bpd",
    "loss_cls",
    "loss_obj",
    "loss_total",
    "mmr2",
    "mr2",
    "nms",
    "one_body_scene",
    "oracle_associate",
    "oracle_nms",
    "overfit",
    "parse_config",
    "perturb_grids",
    "render_perfect_grids",
    "run_inference",
    "save_curves",
    "save_dataset",
    "save_grids",
    "save_predictions",
    "voc_ap",
]
