"""Layer-wise evaluation, threshold sweeps, cross-task transfer, and
plot-ready report emission."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .early_exit import ExitConfig, run_spade_exit
from .errors import ConfigError, ProvenanceError
from .lenses import (
    Distribution,
    LinearLensMap,
    PositionMode,
    Source,
    distribution_from_logits,
    entropy,
    linear_lens_apply,
    logit_lens,
    spade,
    spade_nos,
)
from .model import ModelCheckpoint, checkpoint_hash, forward_full

LINEAR_LENSES = (Source.LSPADE, Source.TUNED_LENS)


@dataclass
class LayerwiseRow:
    layer: int
    lens: str
    accuracy: float
    perplexity: float
    mean_entropy: float
    n: int
    restricted_accuracy: float | None = None  # auxiliary, JSON only


@dataclass
class LayerwiseReport:
    rows: list[LayerwiseRow]
    naive_accuracy: float
    provenance: dict = field(default_factory=dict)


@dataclass
class SweepRow:
    threshold: float
    accuracy: float
    mean_exit_layer: float
    mean_full_ops: float
    mean_reduced_ops: float


@dataclass
class SweepReport:
    rows: list[SweepRow]
    naive_accuracy: float
    provenance: dict = field(default_factory=dict)


def _lens_distribution(
    ckpt: ModelCheckpoint,
    kind: Source,
    state,
    final_logits_row: np.ndarray,
    layer: int,
    maps: dict[Source, dict[int, LinearLensMap]],
    position_mode: PositionMode,
) -> Distribution:
    answer = state.n - 1
    h_l = state.hidden[layer][answer]
    if kind is Source.LOGIT_LENS:
        return logit_lens(ckpt, h_l, layer)
    if kind is Source.SPADE:
        return spade(ckpt, state, layer, position_mode)
    if kind is Source.SPADE_NOS:
        return spade_nos(ckpt, state, layer)
    if kind in LINEAR_LENSES:
        lens = maps.get(kind, {}).get(layer)
        if lens is None:
            raise ConfigError(f"missing {kind.value} map for layer {layer}")
        return linear_lens_apply(ckpt, lens, h_l)
    if kind is Source.FINAL:
        return distribution_from_logits(final_logits_row, Source.FINAL, ckpt.config.n_layers)
    raise ConfigError(f"unknown lens kind {kind}")


def eval_layerwise(
    ckpt: ModelCheckpoint,
    maps: dict[Source, dict[int, LinearLensMap]],
    dataset,
    lens_kinds: list[Source],
    position_mode: PositionMode = PositionMode.COMPACT,
    layers: list[int] | None = None,
) -> LayerwiseReport:
    """Per layer and per lens: full-vocab argmax accuracy, perplexity of the
    gold token, and mean entropy; plus the naive model's accuracy."""
    for kind in lens_kinds:
        if kind in LINEAR_LENSES and kind not in maps:
            raise ConfigError(f"requested {kind.value} but no maps supplied")
    L = ckpt.config.n_layers
    if layers is None:
        layers = list(range(L + 1))
    option_ids = sorted({gold for _, gold in dataset})

    hits = {(l, k): 0 for l in layers for k in lens_kinds}
    r_hits = {(l, k): 0 for l in layers for k in lens_kinds}
    nll = {(l, k): 0.0 for l in layers for k in lens_kinds}
    ent = {(l, k): 0.0 for l in layers for k in lens_kinds}
    naive_hits = 0

    for prompt, gold in dataset:
        state, logits, probs = forward_full(ckpt, prompt)
        answer = state.n - 1
        if int(np.argmax(probs[answer])) == gold:
            naive_hits += 1
        for l in layers:
            for kind in lens_kinds:
                if kind in LINEAR_LENSES and l not in maps.get(kind, {}):
                    continue
                dist = _lens_distribution(ckpt, kind, state, logits[answer], l, maps, position_mode)
                if int(np.argmax(dist.probs)) == gold:
                    hits[(l, kind)] += 1
                restricted = max(option_ids, key=lambda t: dist.probs[t])
                if restricted == gold:
                    r_hits[(l, kind)] += 1
                nll[(l, kind)] += -math.log(max(float(dist.probs[gold]), 1e-30))
                ent[(l, kind)] += entropy(dist)

    n = len(dataset)
    rows = []
    for l in layers:
        for kind in lens_kinds:
            if kind in LINEAR_LENSES and l not in maps.get(kind, {}):
                continue
            rows.append(
                LayerwiseRow(
                    layer=l,
                    lens=kind.value,
                    accuracy=hits[(l, kind)] / n,
                    perplexity=math.exp(nll[(l, kind)] / n),
                    mean_entropy=ent[(l, kind)] / n,
                    n=n,
                    restricted_accuracy=r_hits[(l, kind)] / n,
                )
            )
    return LayerwiseReport(rows=rows, naive_accuracy=naive_hits / n)


def eval_exit_sweep(
    ckpt: ModelCheckpoint,
    maps: dict[int, LinearLensMap],
    dataset,
    thresholds: list[float],
    config_base: ExitConfig,
) -> SweepReport:
    L = ckpt.config.n_layers
    n = len(dataset)
    rows = []
    naive_hits = 0
    for prompt, gold in dataset:
        _, _, probs = forward_full(ckpt, prompt)
        if int(np.argmax(probs[-1])) == gold:
            naive_hits += 1
    for T in thresholds:
        cfg = ExitConfig(
            threshold=T,
            interval=config_base.interval,
            metric=config_base.metric,
            position_mode=config_base.position_mode,
            min_exit_layer=config_base.min_exit_layer,
        )
        hits = 0
        exit_sum = 0.0
        full_sum = 0.0
        reduced_sum = 0.0
        for prompt, gold in dataset:
            trace = run_spade_exit(ckpt, maps, prompt, cfg)
            if int(np.argmax(trace.final_distribution.probs)) == gold:
                hits += 1
            exit_sum += L if trace.exit_layer is None else trace.exit_layer
            full_sum += trace.counter.full_token_block_ops
            reduced_sum += trace.counter.reduced_token_block_ops
        rows.append(
            SweepRow(
                threshold=T,
                accuracy=hits / n,
                mean_exit_layer=exit_sum / n,
                mean_full_ops=full_sum / n,
                mean_reduced_ops=reduced_sum / n,
            )
        )
    return SweepReport(rows=rows, naive_accuracy=naive_hits / n)


def eval_cross_task(
    ckpt: ModelCheckpoint,
    maps: dict[Source, dict[int, LinearLensMap]],
    dataset,
    lens_kinds: list[Source] | None = None,
    position_mode: PositionMode = PositionMode.COMPACT,
    train_task_id: str = "",
    eval_task_id: str = "",
) -> LayerwiseReport:
    """eval_layerwise with foreign maps; refuses maps from another model."""
    ckpt_hash = checkpoint_hash(ckpt)
    for per_layer in maps.values():
        for lens in per_layer.values():
            if lens.source_checkpoint_hash and lens.source_checkpoint_hash != ckpt_hash:
                raise ProvenanceError(
                    f"lens map for layer {lens.layer} was trained on a different checkpoint"
                )
    if lens_kinds is None:
        lens_kinds = [k for k in LINEAR_LENSES if k in maps]
    report = eval_layerwise(ckpt, maps, dataset, lens_kinds, position_mode)
    report.provenance.update({"train_task": train_task_id, "eval_task": eval_task_id})
    return report


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


LAYERWISE_COLUMNS = ["layer", "lens", "accuracy", "perplexity", "mean_entropy", "n"]
SWEEP_COLUMNS = ["threshold", "accuracy", "mean_exit_layer", "mean_full_ops", "mean_reduced_ops"]


def render_report(report, fmt: str) -> str:
    """Stable, byte-reproducible CSV or JSON rendering of a report."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {fmt}")
    if isinstance(report, LayerwiseReport):
        columns = LAYERWISE_COLUMNS
        records = [
            {
                "layer": r.layer,
                "lens": r.lens,
                "accuracy": r.accuracy,
                "perplexity": r.perplexity,
                "mean_entropy": r.mean_entropy,
                "n": r.n,
            }
            for r in report.rows
        ]
        extra = {
            "naive_accuracy": report.naive_accuracy,
            "provenance": report.provenance,
            "restricted_accuracy": {
                f"{r.layer}:{r.lens}": r.restricted_accuracy for r in report.rows
            },
        }
    elif isinstance(report, SweepReport):
        columns = SWEEP_COLUMNS
        records = [
            {
                "threshold": r.threshold,
                "accuracy": r.accuracy,
                "mean_exit_layer": r.mean_exit_layer,
                "mean_full_ops": r.mean_full_ops,
                "mean_reduced_ops": r.mean_reduced_ops,
            }
            for r in report.rows
        ]
        extra = {"naive_accuracy": report.naive_accuracy, "provenance": report.provenance}
    else:
        raise ConfigError(f"cannot render {type(report).__name__}")

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow(_fmt(rec[c]) if isinstance(rec[c], float) else rec[c] for c in columns)
        return buf.getvalue()
    return json.dumps({"rows": records, **extra}, sort_keys=True, indent=2) + "\n"


def emit_report(report, fmt: str, path) -> None:
    with open(path, "w", newline="") as f:
        f.write(render_report(report, fmt))


def parse_layerwise_csv(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        out.append(
            {
                "layer": int(row["layer"]),
                "lens": row["lens"],
                "accuracy": float(row["accuracy"]),
                "perplexity": float(row["perplexity"]),
                "mean_entropy": float(row["mean_entropy"]),
                "n": int(row["n"]),
            }
        )
    return out
