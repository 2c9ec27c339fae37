"""Distill per-layer affine lenses: reduced-pass teachers for the distilled
variant, final-output teachers for the tuned-lens baseline. Gradients are
closed-form through the affine map, the final rmsnorm, and the unembedding;
a finite-difference audit guards the backward pass."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .container import TEACHER_MAGIC, read_container, write_container
from .errors import ConfigError, ConvergenceError, PreconditionError
from .lenses import LinearLensMap, PositionMode, TargetKind, spade
from .model import ModelCheckpoint, checkpoint_hash, forward_full


class Optimizer(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class Init(str, Enum):
    IDENTITY = "identity"
    ZERO = "zero"


@dataclass(frozen=True)
class DistillSample:
    h_l: np.ndarray            # [d] hidden state at the answer position
    teacher_logits: np.ndarray  # [V]
    layer: int
    target_kind: TargetKind


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    steps: int = 500
    batch_size: int = 64
    seed: int = 0
    optimizer: Optimizer = Optimizer.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init: Init = Init.IDENTITY

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")


def collect_samples(
    ckpt: ModelCheckpoint,
    dataset,
    layer: int,
    target_kind: TargetKind,
    position_mode: PositionMode = PositionMode.COMPACT,
) -> list[DistillSample]:
    """One sample per example: h^layer at the answer position plus teacher
    logits (reduced-pass or final-output, per target_kind)."""
    samples = []
    for prompt, _gold in dataset:
        state, logits, _probs = forward_full(ckpt, prompt)
        h_l = np.ascontiguousarray(state.hidden[layer][state.n - 1])
        if target_kind is TargetKind.FINAL_TARGET:
            teacher = np.ascontiguousarray(logits[state.n - 1])
        else:
            teacher = spade(ckpt, state, layer, position_mode).logits
        samples.append(DistillSample(h_l=h_l, teacher_logits=teacher, layer=layer, target_kind=target_kind))
    return samples


def _student_loss_and_grads(
    W: np.ndarray,
    w_final: np.ndarray,
    eps: float,
    A: np.ndarray,
    b: np.ndarray,
    H: np.ndarray,
    teacher: np.ndarray,
):
    """Mean cross-entropy over the batch and dL/dA, dL/db.

    Forward per row: h_hat = A h + b; g = rmsnorm(h_hat, w_final, eps);
    z = W g; loss = CE(softmax(teacher), softmax(z)). float64 throughout so
    the finite-difference audit isn't dominated by rounding.
    """
    B, d = H.shape
    h_hat = H @ A.T + b  # [B, d]
    r = np.sqrt(np.mean(h_hat**2, axis=1) + eps)  # [B]
    g = h_hat * w_final / r[:, None]
    z = g @ W.T  # [B, V]
    zt = teacher
    q = np.exp(zt - zt.max(axis=1, keepdims=True))
    q /= q.sum(axis=1, keepdims=True)
    zs = z - z.max(axis=1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    loss = float(-(q * logp).sum() / B)

    p = np.exp(logp)
    dz = (p - q) / B  # [B, V]
    dg = dz @ W  # [B, d]
    s = ((dg * w_final) * h_hat).sum(axis=1)  # [B]
    dh_hat = (dg * w_final) / r[:, None] - h_hat * (s / (d * r**3))[:, None]
    dA = dh_hat.T @ H
    db = dh_hat.sum(axis=0)
    return loss, dA, db


def _prepare_batch_arrays(samples):
    H = np.stack([s.h_l for s in samples]).astype(np.float64)
    Tz = np.stack([s.teacher_logits for s in samples]).astype(np.float64)
    return H, Tz


def distill_loss(ckpt: ModelCheckpoint, A: np.ndarray, b: np.ndarray, samples) -> float:
    """Mean training loss of (A, b) over `samples` (no gradient)."""
    H, Tz = _prepare_batch_arrays(samples)
    W = ckpt.tensors["unembed"].astype(np.float64)
    w_final = ckpt.tensors["final_norm"].astype(np.float64)
    loss, _, _ = _student_loss_and_grads(W, w_final, ckpt.config.norm_eps, A.astype(np.float64), b.astype(np.float64), H, Tz)
    return loss


def _init_params(d: int, init: Init):
    if init is Init.IDENTITY:
        return np.eye(d), np.zeros(d)
    return np.zeros((d, d)), np.zeros(d)


def train_linear_map(ckpt: ModelCheckpoint, samples, config: TrainConfig) -> LinearLensMap:
    """Minimize mean cross-entropy to the (constant) teacher logits."""
    if not samples:
        raise PreconditionError("train_linear_map: empty sample list")
    layer = samples[0].layer
    target_kind = samples[0].target_kind
    if any(s.layer != layer or s.target_kind != target_kind for s in samples):
        raise PreconditionError("all samples must share (layer, target_kind)")

    d = ckpt.config.d_model
    W = ckpt.tensors["unembed"].astype(np.float64)
    w_final = ckpt.tensors["final_norm"].astype(np.float64)
    eps = ckpt.config.norm_eps
    H_all, T_all = _prepare_batch_arrays(samples)
    A, b = _init_params(d, config.init)

    rng = T.Rng(config.seed)
    n = len(samples)
    bs = min(config.batch_size, n)
    mA = np.zeros_like(A); vA = np.zeros_like(A)
    mb = np.zeros_like(b); vb = np.zeros_like(b)
    order = list(range(n))
    cursor = n  # force reshuffle on first use
    loss = float("nan")
    for step in range(config.steps):
        if bs == n:
            idx = order
        else:
            if cursor + bs > n:
                rng.shuffle(order)
                cursor = 0
            idx = order[cursor:cursor + bs]
            cursor += bs
        loss, dA, db = _student_loss_and_grads(W, w_final, eps, A, b, H_all[idx], T_all[idx])
        if not np.isfinite(loss):
            raise ConvergenceError(f"training diverged at step {step}", step=step, value=loss)
        if config.optimizer is Optimizer.SGD:
            A -= config.learning_rate * dA
            b -= config.learning_rate * db
        else:
            t = step + 1
            mA = config.beta1 * mA + (1 - config.beta1) * dA
            vA = config.beta2 * vA + (1 - config.beta2) * dA**2
            mb = config.beta1 * mb + (1 - config.beta1) * db
            vb = config.beta2 * vb + (1 - config.beta2) * db**2
            c1 = 1 - config.beta1**t
            c2 = 1 - config.beta2**t
            A -= config.learning_rate * (mA / c1) / (np.sqrt(vA / c2) + config.adam_eps)
            b -= config.learning_rate * (mb / c1) / (np.sqrt(vb / c2) + config.adam_eps)

    return LinearLensMap(
        layer=layer,
        A=A.astype(T.F32),
        b=b.astype(T.F32),
        target_kind=target_kind,
        source_checkpoint_hash=checkpoint_hash(ckpt),
        train_loss=loss,
    )


def grad_check(
    ckpt: ModelCheckpoint,
    lens: LinearLensMap,
    sample: DistillSample,
    epsilon: float,
    seed: int = 0,
    n_coords: int = 64,
) -> float:
    """Central finite differences vs the analytic gradient at (A, b).

    Probes >= n_coords random coordinates of A plus every coordinate of b;
    returns max relative error with denominator max(|fd|, |an|, 1e-8).
    """
    if not (1e-5 <= epsilon <= 1e-2):
        raise PreconditionError(f"epsilon {epsilon} outside [1e-5, 1e-2]")
    d = ckpt.config.d_model
    W = ckpt.tensors["unembed"].astype(np.float64)
    w_final = ckpt.tensors["final_norm"].astype(np.float64)
    eps = ckpt.config.norm_eps
    H = sample.h_l.astype(np.float64)[None, :]
    Tz = sample.teacher_logits.astype(np.float64)[None, :]
    A = lens.A.astype(np.float64)
    b = lens.b.astype(np.float64)
    _, dA, db = _student_loss_and_grads(W, w_final, eps, A, b, H, Tz)

    def loss_at(Ax, bx):
        l, _, _ = _student_loss_and_grads(W, w_final, eps, Ax, bx, H, Tz)
        return l

    rng = T.Rng(seed)
    coords = [(rng.randint(0, d), rng.randint(0, d)) for _ in range(n_coords)]
    max_rel = 0.0
    for (i, j) in coords:
        Ap = A.copy(); Ap[i, j] += epsilon
        Am = A.copy(); Am[i, j] -= epsilon
        fd = (loss_at(Ap, b) - loss_at(Am, b)) / (2 * epsilon)
        an = dA[i, j]
        max_rel = max(max_rel, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    for j in range(d):
        bp = b.copy(); bp[j] += epsilon
        bm = b.copy(); bm[j] -= epsilon
        fd = (loss_at(A, bp) - loss_at(A, bm)) / (2 * epsilon)
        an = db[j]
        max_rel = max(max_rel, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return max_rel


def teacher_cache_key(ckpt_hash: str, dataset_id: str, layer: int, target_kind: TargetKind, position_mode: PositionMode) -> str:
    raw = f"{ckpt_hash}:{dataset_id}:{layer}:{target_kind.value}:{position_mode.value}"
    return hashlib.sha256(raw.encode()).hexdigest()[:24]


def save_teacher_cache(path, samples, *, ckpt_hash: str, dataset_id: str, position_mode: PositionMode) -> None:
    if not samples:
        raise PreconditionError("empty sample list")
    meta = {
        "checkpoint_hash": ckpt_hash,
        "dataset_id": dataset_id,
        "layer": samples[0].layer,
        "target_kind": samples[0].target_kind.value,
        "position_mode": position_mode.value,
    }
    tensors = {
        "h": np.stack([s.h_l for s in samples]),
        "teacher": np.stack([s.teacher_logits for s in samples]),
    }
    write_container(path, TEACHER_MAGIC, meta, tensors)


def load_teacher_cache(path) -> tuple[dict, list[DistillSample]]:
    meta, tensors = read_container(path, TEACHER_MAGIC)
    kind = TargetKind(meta["target_kind"])
    samples = [
        DistillSample(h_l=h, teacher_logits=t, layer=meta["layer"], target_kind=kind)
        for h, t in zip(tensors["h"], tensors["teacher"])
    ]
    return meta, samples
