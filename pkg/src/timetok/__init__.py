"""One encoder-decoder, three temporal video tasks, one token vocabulary."""

from .vocab import Role, Task, VocabLayout, build_layout, class_to_token, legal_mask, time_to_token, token_to_class, token_to_time
from .codec import (
    DecodeError,
    GebdBoundary,
    TadInstance,
    TargetSequence,
    TasSegment,
    Window,
    detokenize_gebd,
    detokenize_tad,
    detokenize_tas,
    merge_windows,
    nms_1d,
    tokenize_gebd,
    tokenize_tad,
    tokenize_tas,
)
from .losses import LossConfig, NumericError, combined_loss, loss_gebd, loss_tad, loss_tas
from .model import ModelConfig, embed_features, encode, decode_teacher_forced, forward_backward, generate, init_params

__all__ = [
    "Role",
    "Task",
    "VocabLayout",
    "build_layout",
    "class_to_token",
    "legal_mask",
    "time_to_token",
    "token_to_class",
    "token_to_time",
    "DecodeError",
    "GebdBoundary",
    "TadInstance",
    "TargetSequence",
    "TasSegment",
    "Window",
    "detokenize_gebd",
    "detokenize_tad",
    "detokenize_tas",
    "merge_windows",
    "nms_1d",
    "tokenize_gebd",
    "tokenize_tad",
    "tokenize_tas",
    "LossConfig",
    "NumericError",
    "combined_loss",
    "loss_gebd",
    "loss_tad",
    "loss_tas",
    "ModelConfig",
    "embed_features",
    "encode",
    "decode_teacher_forced",
    "forward_backward",
    "generate",
    "init_params",
]
