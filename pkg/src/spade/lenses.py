"""Decoding intermediate layers: Logit Lens, reduced-sequence re-entry
(with and without the start token), learned affine lenses, and the
confidence metrics used for exit decisions."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .container import LENS_MAGIC, read_container, write_container
from .counters import OpCounter
from .errors import ConfigError, PreconditionError, ShapeError
from .model import LayerState, ModelCheckpoint, ReducedState, forward_from, unembed


class Source(str, Enum):
    LOGIT_LENS = "logitlens"
    SPADE = "spade"
    SPADE_NOS = "spadenos"
    LSPADE = "lspade"
    TUNED_LENS = "tunedlens"
    FINAL = "final"


class TargetKind(str, Enum):
    SPADE_TARGET = "spade"
    FINAL_TARGET = "final"


class PositionMode(str, Enum):
    COMPACT = "compact"    # reduced pair carries positions (0, 1)
    ORIGINAL = "original"  # reduced pair keeps positions (0, n-1)


@dataclass(frozen=True)
class Distribution:
    probs: np.ndarray   # [V]
    logits: np.ndarray  # [V]
    source: Source
    layer: int


def distribution_from_logits(logits: np.ndarray, source: Source, layer: int) -> Distribution:
    return Distribution(probs=T.softmax(logits), logits=logits, source=source, layer=layer)


@dataclass(frozen=True)
class LinearLensMap:
    """Per-layer affine map h -> A h + b into the final layer's space."""

    layer: int
    A: np.ndarray  # [d, d]
    b: np.ndarray  # [d]
    target_kind: TargetKind
    source_checkpoint_hash: str = ""
    train_loss: float | None = None

    def __post_init__(self):
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ShapeError(f"A must be square, got {self.A.shape}")
        T.require_shape("b", self.b, (self.A.shape[0],))
        T.require_finite("A", self.A)
        T.require_finite("b", self.b)

    @property
    def source(self) -> Source:
        return Source.LSPADE if self.target_kind is TargetKind.SPADE_TARGET else Source.TUNED_LENS


def save_lens_map(path, lens: LinearLensMap) -> None:
    meta = {
        "layer": lens.layer,
        "target_kind": lens.target_kind.value,
        "d_model": int(lens.A.shape[0]),
        "source_checkpoint_hash": lens.source_checkpoint_hash,
    }
    if lens.train_loss is not None:
        meta["train_loss"] = lens.train_loss
    write_container(path, LENS_MAGIC, meta, {"A": lens.A, "b": lens.b})


def load_lens_map(path) -> LinearLensMap:
    meta, tensors = read_container(path, LENS_MAGIC)
    return LinearLensMap(
        layer=meta["layer"],
        A=tensors["A"],
        b=tensors["b"],
        target_kind=TargetKind(meta["target_kind"]),
        source_checkpoint_hash=meta.get("source_checkpoint_hash", ""),
        train_loss=meta.get("train_loss"),
    )


def logit_lens(ckpt: ModelCheckpoint, h_l: np.ndarray, layer: int) -> Distribution:
    logits = unembed(ckpt, h_l)
    return distribution_from_logits(logits, Source.LOGIT_LENS, layer)


def _require_bos(ckpt: ModelCheckpoint, layer_state: LayerState) -> None:
    if layer_state.token_ids[0] != ckpt.config.bos_token_id:
        raise PreconditionError(
            f"sequence must start with the start token {ckpt.config.bos_token_id}, "
            f"got {layer_state.token_ids[0]}"
        )


def _reduced_positions(mode: PositionMode, n: int) -> tuple[int, int]:
    return (0, 1) if mode is PositionMode.COMPACT else (0, n - 1)


def _require_layer(ckpt: ModelCheckpoint, layer: int) -> None:
    if not (0 <= layer <= ckpt.config.n_layers):
        raise ConfigError(f"layer {layer} outside [0, {ckpt.config.n_layers}]")


def reduced_readout(
    ckpt: ModelCheckpoint,
    rows: np.ndarray,
    positions: tuple[int, ...],
    layer: int,
    source: Source,
    counter: OpCounter | None = None,
) -> Distribution:
    """Re-enter `rows` at `layer`, run to the top, decode the last row.
    Single code path shared by the lens API and the early-exit runtime."""
    reduced = ReducedState(rows=rows, positions=positions, layer=layer)
    top = forward_from(ckpt, reduced, counter=counter)
    logits = unembed(ckpt, top[-1])
    return distribution_from_logits(logits, source, layer)


def spade(
    ckpt: ModelCheckpoint,
    layer_state: LayerState,
    layer: int,
    position_mode: PositionMode = PositionMode.COMPACT,
    counter: OpCounter | None = None,
) -> Distribution:
    """Decode layer `layer` by re-entering with the (start, answer) pair."""
    _require_bos(ckpt, layer_state)
    _require_layer(ckpt, layer)
    n = layer_state.n
    if n < 2:
        raise PreconditionError("reduced-pair decoding needs a sequence of length >= 2")
    rows = np.ascontiguousarray(layer_state.hidden[layer][[0, n - 1]])
    positions = _reduced_positions(position_mode, n)
    return reduced_readout(ckpt, rows, positions, layer, Source.SPADE, counter=counter)


def spade_nos(
    ckpt: ModelCheckpoint,
    layer_state: LayerState,
    layer: int,
    counter: OpCounter | None = None,
) -> Distribution:
    """Start-token ablation: re-enter with the answer row only."""
    _require_bos(ckpt, layer_state)
    _require_layer(ckpt, layer)
    n = layer_state.n
    rows = np.ascontiguousarray(layer_state.hidden[layer][[n - 1]])
    return reduced_readout(ckpt, rows, (0,), layer, Source.SPADE_NOS, counter=counter)


def linear_lens_apply(ckpt: ModelCheckpoint, lens: LinearLensMap, h_l: np.ndarray) -> Distribution:
    d = ckpt.config.d_model
    T.require_shape("h_l", h_l, (d,))
    if lens.A.shape[0] != d:
        raise ConfigError(f"lens d_model {lens.A.shape[0]} != model d_model {d}")
    h_hat = (T.matmul(lens.A, h_l.reshape(-1, 1)).reshape(-1) + lens.b).astype(T.F32)
    logits = unembed(ckpt, h_hat)
    return distribution_from_logits(logits, lens.source, lens.layer)


def entropy(dist: Distribution) -> float:
    """H = -sum p log p in nats; zero-probability terms contribute 0."""
    p = dist.probs.astype(np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def top2_gap(dist: Distribution) -> float:
    if dist.probs.shape[0] < 2:
        raise ShapeError("top2_gap needs a vocabulary of size >= 2")
    p = np.partition(dist.probs, -2)
    return float(p[-1] - p[-2])
