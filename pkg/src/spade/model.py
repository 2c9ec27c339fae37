"""Decoder-only transformer forward pass with full hidden-state capture
and the partial re-entry pass used by reduced-sequence decoding.

Blocks are LLaMA-style: pre-norm RMSNorm, rotary positions applied to q/k
as interleaved pairs, causal attention, gated (SwiGLU-form) MLP. Projection
weights are stored [out_features, in_features] and applied as x @ W.T;
the unembedding is stored [V, d] and applied as W @ h.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .container import CHECKPOINT_MAGIC, read_container, write_container
from .counters import OpCounter
from .errors import ConfigError, PreconditionError, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab_size: int
    rope_theta: float = 10000.0
    norm_eps: float = 1e-5
    bos_token_id: int = 1
    max_seq_len: int = 512

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_head % 2 != 0:
            raise ConfigError(f"d_head must be even, got {self.d_head}")
        if not (0 <= self.bos_token_id < self.vocab_size):
            raise ConfigError(f"bos_token_id {self.bos_token_id} outside [0, {self.vocab_size})")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


LAYER_TENSORS = ("attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_up", "w_gate", "w_down")


def canonical_tensor_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, ff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embed": (v, d)}
    per_layer = {
        "attn_norm": (d,),
        "wq": (d, d),
        "wk": (d, d),
        "wv": (d, d),
        "wo": (d, d),
        "mlp_norm": (d,),
        "w_up": (ff, d),
        "w_gate": (ff, d),
        "w_down": (d, ff),
    }
    for l in range(cfg.n_layers):
        for name in LAYER_TENSORS:
            shapes[f"layers.{l}.{name}"] = per_layer[name]
    shapes["final_norm"] = (d,)
    shapes["unembed"] = (v, d)
    return shapes


@dataclass(frozen=True)
class ModelCheckpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = canonical_tensor_shapes(self.config)
        missing = sorted(set(expected) - set(self.tensors))
        if missing:
            raise ShapeError(f"checkpoint missing tensors: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        extra = sorted(set(self.tensors) - set(expected))
        if extra:
            raise ShapeError(f"checkpoint has unknown tensors: {extra[:5]}")
        for name, shape in expected.items():
            T.require_shape(name, self.tensors[name], shape)
            T.require_finite(name, self.tensors[name])

    def layer(self, l: int, name: str) -> np.ndarray:
        return self.tensors[f"layers.{l}.{name}"]


@dataclass(frozen=True)
class LayerState:
    """h^l for every layer l in [0, L] and position i in [0, n)."""

    hidden: np.ndarray  # [(L+1), n, d]
    token_ids: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.hidden.shape[1]


@dataclass(frozen=True)
class ReducedState:
    """Hidden rows re-entered at `layer`; 1 or 2 rows, positions increasing."""

    rows: np.ndarray  # [m, d], m in {1, 2}
    positions: tuple[int, ...]
    layer: int

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] not in (1, 2):
            raise ShapeError(f"ReducedState rows must be [1|2, d], got {self.rows.shape}")
        if len(self.positions) != self.rows.shape[0]:
            raise ShapeError("ReducedState positions must match row count")
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            raise PreconditionError(f"positions must be strictly increasing, got {self.positions}")


def checkpoint_hash(ckpt: ModelCheckpoint) -> str:
    """Content hash over config + canonical tensor bytes."""
    h = hashlib.sha256()
    h.update(json.dumps(asdict(ckpt.config), sort_keys=True).encode())
    for name in sorted(ckpt.tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(ckpt.tensors[name], dtype="<f4").tobytes())
    return h.hexdigest()


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    ordered = {name: ckpt.tensors[name] for name in canonical_tensor_shapes(ckpt.config)}
    meta = {"config": asdict(ckpt.config), "content_hash": checkpoint_hash(ckpt)}
    write_container(path, CHECKPOINT_MAGIC, meta, ordered)


def load_checkpoint(path) -> ModelCheckpoint:
    meta, tensors = read_container(path, CHECKPOINT_MAGIC)
    cfg = ModelConfig(**meta["config"])
    return ModelCheckpoint(config=cfg, tensors=tensors)


def random_checkpoint(cfg: ModelConfig, rng: T.Rng, scale: float | None = None) -> ModelCheckpoint:
    """Seeded random weights at a scale that keeps activations tame."""
    if scale is None:
        scale = 1.0 / math.sqrt(cfg.d_model)
    tensors = {}
    for name, shape in canonical_tensor_shapes(cfg).items():
        if name.endswith("norm"):
            tensors[name] = np.ones(shape, dtype=T.F32)
        else:
            tensors[name] = rng.normal_array(shape, scale=scale)
    return ModelCheckpoint(config=cfg, tensors=tensors)


def embed(ckpt: ModelCheckpoint, tokens) -> np.ndarray:
    v = ckpt.config.vocab_size
    for t in tokens:
        if not (0 <= t < v):
            raise PreconditionError(f"token id {t} outside [0, {v})")
    return np.ascontiguousarray(ckpt.tensors["embed"][list(tokens)], dtype=T.F32)


def _attention(ckpt: ModelCheckpoint, l: int, x: np.ndarray, positions) -> np.ndarray:
    cfg = ckpt.config
    m = x.shape[0]
    heads, d_head = cfg.n_heads, cfg.d_head
    q = T.matmul(x, ckpt.layer(l, "wq").T).reshape(m, heads, d_head)
    k = T.matmul(x, ckpt.layer(l, "wk").T).reshape(m, heads, d_head)
    vv = T.matmul(x, ckpt.layer(l, "wv").T).reshape(m, heads, d_head)
    for i, pos in enumerate(positions):
        q[i] = T.rope_apply(q[i], pos, cfg.rope_theta)
        k[i] = T.rope_apply(k[i], pos, cfg.rope_theta)
    out = np.empty((m, heads, d_head), dtype=T.F32)
    inv_sqrt = T.F32(1.0 / math.sqrt(d_head))
    pos = np.asarray(positions)
    # position i attends to all j with positions[j] <= positions[i]
    mask = pos[None, :] <= pos[:, None]
    for h in range(heads):
        scores = (q[:, h, :] @ k[:, h, :].T) * inv_sqrt  # [m, m]
        scores = np.where(mask, scores, T.F32(-np.inf)).astype(T.F32)
        weights = T.softmax(scores)
        out[:, h, :] = weights @ vv[:, h, :]
    return T.matmul(out.reshape(m, heads * d_head), ckpt.layer(l, "wo").T)


def _silu(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return (x / (1.0 + np.exp(-x))).astype(T.F32)


def forward_block(ckpt: ModelCheckpoint, l: int, states: np.ndarray, positions) -> np.ndarray:
    """One pre-norm block: x + Attn(norm(x)), then + MLP(norm(.))."""
    cfg = ckpt.config
    if not (1 <= l <= cfg.n_layers):
        raise ConfigError(f"layer index {l} outside [1, {cfg.n_layers}]")
    if states.ndim != 2 or states.shape[1] != cfg.d_model:
        raise ShapeError(f"forward_block: states must be [m, {cfg.d_model}], got {states.shape}")
    if len(positions) != states.shape[0]:
        raise ShapeError("forward_block: positions must match state rows")
    if any(b <= a for a, b in zip(positions, positions[1:])):
        raise PreconditionError(f"positions must be strictly increasing, got {tuple(positions)}")
    li = l - 1  # weights are 0-indexed
    x = states
    x = x + _attention(ckpt, li, T.rmsnorm(x, ckpt.layer(li, "attn_norm"), cfg.norm_eps), positions)
    h = T.rmsnorm(x, ckpt.layer(li, "mlp_norm"), cfg.norm_eps)
    gate = _silu(T.matmul(h, ckpt.layer(li, "w_gate").T))
    up = T.matmul(h, ckpt.layer(li, "w_up").T)
    x = x + T.matmul((gate * up).astype(T.F32), ckpt.layer(li, "w_down").T)
    return T.require_finite(f"forward_block[{l}]", x.astype(T.F32))


def forward_full(
    ckpt: ModelCheckpoint, tokens, counter: OpCounter | None = None
) -> tuple[LayerState, np.ndarray, np.ndarray]:
    """Full forward pass; returns (LayerState with all h^l, logits [n,V], probs [n,V])."""
    cfg = ckpt.config
    n = len(tokens)
    if not (1 <= n <= cfg.max_seq_len):
        raise PreconditionError(f"sequence length {n} outside [1, {cfg.max_seq_len}]")
    positions = list(range(n))
    hidden = np.empty((cfg.n_layers + 1, n, cfg.d_model), dtype=T.F32)
    hidden[0] = embed(ckpt, tokens)
    for l in range(1, cfg.n_layers + 1):
        hidden[l] = forward_block(ckpt, l, hidden[l - 1], positions)
        if counter is not None:
            counter.add_full(n)
    logits = np.stack([unembed(ckpt, hidden[cfg.n_layers][i]) for i in range(n)])
    probs = T.softmax(logits)
    return LayerState(hidden=hidden, token_ids=tuple(tokens)), logits, probs


def forward_from(ckpt: ModelCheckpoint, reduced: ReducedState, counter: OpCounter | None = None) -> np.ndarray:
    """Re-enter at reduced.layer and apply blocks layer+1..L. No embedding,
    no final norm — this returns raw residual-stream rows at layer L."""
    cfg = ckpt.config
    if not (0 <= reduced.layer <= cfg.n_layers):
        raise ConfigError(f"re-entry layer {reduced.layer} outside [0, {cfg.n_layers}]")
    x = np.ascontiguousarray(reduced.rows, dtype=T.F32)
    for l in range(reduced.layer + 1, cfg.n_layers + 1):
        x = forward_block(ckpt, l, x, reduced.positions)
        if counter is not None:
            counter.add_reduced(x.shape[0])
    return x


def unembed(ckpt: ModelCheckpoint, h: np.ndarray) -> np.ndarray:
    """Final rmsnorm then W @ h -> logits [V]."""
    cfg = ckpt.config
    T.require_shape("unembed input", h, (cfg.d_model,))
    g = T.rmsnorm(h, ckpt.tensors["final_norm"], cfg.norm_eps)
    return T.matmul(ckpt.tensors["unembed"], g.reshape(-1, 1)).reshape(-1)
