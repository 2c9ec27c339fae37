"""Adaptive early-exit runtime: layer-by-layer forward with periodic
linear-lens confidence checks, truncation to the 2-token reduced pass on
exit, and exact op accounting.

The exit DECISION uses only the learned linear lens; the ANSWER on exit is
produced only by the reduced-pass readout. `update_cache` is recorded in the
trace but transfers no state across generation steps (single-token scope)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .counters import OpCounter
from .errors import ConfigError, PreconditionError
from .lenses import (
    Distribution,
    LinearLensMap,
    PositionMode,
    Source,
    distribution_from_logits,
    entropy,
    linear_lens_apply,
    reduced_readout,
    top2_gap,
)
from .model import ModelCheckpoint, embed, forward_block, unembed


class Metric(str, Enum):
    ENTROPY = "entropy"   # confident when value <= threshold
    TOP2_GAP = "top2"     # confident when value >= threshold


@dataclass(frozen=True)
class ExitConfig:
    threshold: float
    interval: int = 1
    metric: Metric = Metric.ENTROPY
    position_mode: PositionMode = PositionMode.COMPACT
    min_exit_layer: int = 1

    def __post_init__(self):
        if self.interval < 1:
            raise ConfigError("interval must be >= 1")
        if self.min_exit_layer < 0:
            raise ConfigError("min_exit_layer must be >= 0")


@dataclass
class ExitTrace:
    exit_layer: int | None
    checked_layers: list[tuple[int, float]]
    final_distribution: Distribution
    counter: OpCounter
    cache_updates: int = 0

    def to_json_record(self) -> dict:
        return {
            "exit_layer": self.exit_layer,
            "checks": [[l, v] for l, v in self.checked_layers],
            "ops": {
                "full": self.counter.full_token_block_ops,
                "reduced": self.counter.reduced_token_block_ops,
                "lens": self.counter.lens_evals,
            },
            "argmax_token": int(np.argmax(self.final_distribution.probs)),
            "entropy_final": entropy(self.final_distribution),
        }


def scheduled_layers(L: int, interval: int, min_exit_layer: int) -> list[int]:
    return [l for l in range(1, L + 1) if l % interval == 0 and l >= min_exit_layer]


def _confident(metric: Metric, value: float, threshold: float) -> bool:
    if metric is Metric.ENTROPY:
        return value <= threshold
    return value >= threshold


def run_spade_exit(
    ckpt: ModelCheckpoint,
    maps: dict[int, LinearLensMap],
    tokens,
    config: ExitConfig,
) -> ExitTrace:
    cfg = ckpt.config
    L = cfg.n_layers
    if tokens[0] != cfg.bos_token_id:
        raise PreconditionError(f"sequence must start with the start token {cfg.bos_token_id}")
    schedule = scheduled_layers(L, config.interval, config.min_exit_layer)
    missing = [l for l in schedule if l not in maps]
    if missing:
        raise ConfigError(f"no lens map for scheduled check layers {missing}")

    n = len(tokens)
    counter = OpCounter()
    checks: list[tuple[int, float]] = []
    states = embed(ckpt, tokens)
    positions = list(range(n))
    answer = n - 1
    for l in range(1, L + 1):
        states = forward_block(ckpt, l, states, positions)
        counter.add_full(n)
        if l in schedule:
            dist = linear_lens_apply(ckpt, maps[l], states[answer])
            counter.add_lens()
            value = entropy(dist) if config.metric is Metric.ENTROPY else top2_gap(dist)
            checks.append((l, value))
            if _confident(config.metric, value, config.threshold):
                if n < 2:
                    raise PreconditionError("reduced-pair exit needs sequence length >= 2")
                rows = np.ascontiguousarray(states[[0, answer]])
                pos = (0, 1) if config.position_mode is PositionMode.COMPACT else (0, answer)
                final = reduced_readout(ckpt, rows, pos, l, Source.SPADE, counter=counter)
                trace = ExitTrace(exit_layer=l, checked_layers=checks, final_distribution=final, counter=counter)
                trace.cache_updates = L - l  # recorded, never consumed (single-token scope)
                return trace

    logits = unembed(ckpt, states[answer])
    final = distribution_from_logits(logits, Source.FINAL, L)
    return ExitTrace(exit_layer=None, checked_layers=checks, final_distribution=final, counter=counter)


def cost_model(n: int, L: int, exit_layer: int | None, interval: int, min_exit_layer: int) -> OpCounter:
    """Predicted op counts; must match run_spade_exit's measured counter exactly."""
    if exit_layer is not None and not (0 <= exit_layer <= L):
        raise ConfigError(f"exit_layer {exit_layer} outside [0, {L}]")
    schedule = scheduled_layers(L, interval, min_exit_layer)
    if exit_layer is None:
        return OpCounter(
            full_token_block_ops=n * L,
            reduced_token_block_ops=0,
            lens_evals=len(schedule),
        )
    return OpCounter(
        full_token_block_ops=n * exit_layer,
        reduced_token_block_ops=2 * (L - exit_layer),
        lens_evals=len([l for l in schedule if l <= exit_layer]),
    )


def first_scheduled_layer(L: int, interval: int, min_exit_layer: int) -> int | None:
    sched = scheduled_layers(L, interval, min_exit_layer)
    return sched[0] if sched else None
