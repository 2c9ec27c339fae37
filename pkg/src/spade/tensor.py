"""Deterministic f32 tensor primitives.

All functions take and return float32 numpy arrays with explicit shapes —
no broadcasting at the API surface, and every result is checked finite.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericsError, ShapeError

F32 = np.float32

_MASK64 = (1 << 64) - 1


class Rng:
    """splitmix64 stream. Identical seed gives an identical sample stream
    on every platform; used for all seeded test/data generation."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 bits of entropy."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        """Standard normal via Box-Muller (one value per call, spare dropped)."""
        u1 = self.uniform()
        while u1 == 0.0:
            u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi). Modulo bias is irrelevant at test ranges."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        return lo + self.next_u64() % (hi - lo)

    def choice(self, items):
        return items[self.randint(0, len(items))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]

    def normal_array(self, shape, scale: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=F32)
        for i in range(n):
            out[i] = scale * self.normal()
        return out.reshape(shape)

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=F32)
        for i in range(n):
            out[i] = lo + (hi - lo) * self.uniform()
        return out.reshape(shape)


def as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=F32))


def require_shape(name: str, x: np.ndarray, shape: tuple) -> None:
    if tuple(x.shape) != tuple(shape):
        raise ShapeError(f"{name}: expected shape {tuple(shape)}, got {tuple(x.shape)}")


def require_finite(name: str, x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"{name}: non-finite values in result")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: operands must be 2-D, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = (as_f32(a) @ as_f32(b)).astype(F32)
    return require_finite("matmul", out)


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (max subtraction); argmax preserved."""
    z = as_f32(z)
    if z.size == 0:
        raise ShapeError("softmax: empty input")
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    out = (e / np.sum(e, axis=-1, keepdims=True)).astype(F32)
    return require_finite("softmax", out)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = as_f32(z)
    if z.size == 0:
        raise ShapeError("log_softmax: empty input")
    m = np.max(z, axis=-1, keepdims=True)
    s = z - m
    out = (s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))).astype(F32)
    return require_finite("log_softmax", out)


def rmsnorm(x: np.ndarray, weight: np.ndarray, eps: float) -> np.ndarray:
    """x_i * w_i / sqrt(mean(x^2) + eps), over the last axis."""
    x = as_f32(x)
    weight = as_f32(weight)
    if x.shape[-1] != weight.shape[-1] or weight.ndim != 1:
        raise ShapeError(f"rmsnorm: x {x.shape} vs weight {weight.shape}")
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    out = (x / np.sqrt(ms + F32(eps)) * weight).astype(F32)
    return require_finite("rmsnorm", out)


def rope_apply(x: np.ndarray, position: int, theta: float) -> np.ndarray:
    """Rotate consecutive pairs of each head's vector by position * theta^(-2i/d_head).

    x has shape [heads, d_head] with d_head even.
    """
    x = as_f32(x)
    if x.ndim != 2:
        raise ShapeError(f"rope_apply: expected [heads, d_head], got {x.shape}")
    heads, d_head = x.shape
    if d_head % 2 != 0:
        raise ShapeError(f"rope_apply: d_head must be even, got {d_head}")
    idx = np.arange(d_head // 2, dtype=np.float64)
    angles = position * theta ** (-2.0 * idx / d_head)
    cos = np.cos(angles).astype(F32)
    sin = np.sin(angles).astype(F32)
    pairs = x.reshape(heads, d_head // 2, 2)
    even = pairs[:, :, 0]
    odd = pairs[:, :, 1]
    out = np.empty_like(pairs)
    out[:, :, 0] = even * cos - odd * sin
    out[:, :, 1] = even * sin + odd * cos
    return require_finite("rope_apply", out.reshape(heads, d_head))


def cross_entropy(teacher_logits: np.ndarray, student_logits: np.ndarray) -> float:
    """-sum_v softmax(teacher)_v * log softmax(student)_v.

    The teacher is a constant target; no gradient semantics here.
    """
    t = as_f32(teacher_logits)
    s = as_f32(student_logits)
    if t.shape != s.shape or t.ndim != 1:
        raise ShapeError(f"cross_entropy: {t.shape} vs {s.shape}")
    # float64 accumulation; values like -log(~1e-9) must come out clean
    t64 = t.astype(np.float64)
    s64 = s.astype(np.float64)
    q = np.exp(t64 - t64.max())
    q /= q.sum()
    logp = s64 - s64.max()
    logp -= np.log(np.exp(logp).sum())
    val = float(-(q * logp).sum())
    if not math.isfinite(val):
        raise NumericsError("cross_entropy: non-finite result")
    return val
