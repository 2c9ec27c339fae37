"""Reduced-sequence early-exit decoding engine with layer lenses."""

from .counters import OpCounter
from .early_exit import ExitConfig, ExitTrace, Metric, cost_model, run_spade_exit
from .lenses import (
    Distribution,
    LinearLensMap,
    PositionMode,
    Source,
    TargetKind,
    entropy,
    linear_lens_apply,
    logit_lens,
    spade,
    spade_nos,
    top2_gap,
)
from .model import (
    LayerState,
    ModelCheckpoint,
    ModelConfig,
    ReducedState,
    embed,
    forward_block,
    forward_from,
    forward_full,
    load_checkpoint,
    save_checkpoint,
    unembed,
)
from .tensor import Rng

__all__ = [
    "Distribution",
    "ExitConfig",
    "ExitTrace",
    "LayerState",
    "LinearLensMap",
    "Metric",
    "ModelCheckpoint",
    "ModelConfig",
    "OpCounter",
    "PositionMode",
    "ReducedState",
    "Rng",
    "Source",
    "TargetKind",
    "cost_model",
    "embed",
    "entropy",
    "forward_block",
    "forward_from",
    "forward_full",
    "linear_lens_apply",
    "load_checkpoint",
    "logit_lens",
    "run_spade_exit",
    "save_checkpoint",
    "spade",
    "spade_nos",
    "top2_gap",
    "unembed",
]
