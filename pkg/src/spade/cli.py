"""Command-line surface for the engine and benchmark harness."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .distill import (
    TrainConfig,
    collect_samples,
    load_teacher_cache,
    save_teacher_cache,
    teacher_cache_key,
    train_linear_map,
)
from .early_exit import ExitConfig, Metric, run_spade_exit
from .errors import ConfigError
from .harness import emit_report, eval_cross_task, eval_exit_sweep, eval_layerwise
from .lenses import LinearLensMap, PositionMode, Source, TargetKind, load_lens_map, save_lens_map
from .model import ModelConfig, checkpoint_hash, load_checkpoint, save_checkpoint
from .tasks import TaskKind, TaskSpec, gen_task, load_task, save_task
from .toy_train import train_toy_model

_KIND_BY_TARGET = {TargetKind.SPADE_TARGET: "lspade", TargetKind.FINAL_TARGET: "tunedlens"}
_SOURCE_BY_NAME = {
    "lspade": Source.LSPADE,
    "tunedlens": Source.TUNED_LENS,
    "logitlens": Source.LOGIT_LENS,
    "spade": Source.SPADE,
    "spadenos": Source.SPADE_NOS,
}


def map_filename(target_kind: TargetKind, layer: int) -> str:
    return f"{_KIND_BY_TARGET[target_kind]}.layer{layer:03d}.lens"


def load_maps_dir(path) -> dict[Source, dict[int, LinearLensMap]]:
    maps: dict[Source, dict[int, LinearLensMap]] = {}
    for f in sorted(Path(path).glob("*.lens")):
        lens = load_lens_map(f)
        maps.setdefault(lens.source, {})[lens.layer] = lens
    if not maps:
        raise ConfigError(f"no .lens files found in {path}")
    return maps


@click.group()
def main():
    """Reduced-sequence early-exit decoding: toy training, lens distillation,
    layer-wise evaluation, and threshold sweeps."""


@main.command("gen-task")
@click.option("--kind", type=click.Choice(["induction", "majority"]), required=True)
@click.option("--vocab", type=int, default=64, show_default=True)
@click.option("--seq-len", type=int, default=16, show_default=True)
@click.option("--n", type=int, default=512, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def gen_task_cmd(kind, vocab, seq_len, n, seed, out):
    """Generate a synthetic single-token task file (JSONL)."""
    spec = TaskSpec(kind=TaskKind(kind), vocab_size=vocab, seq_len=seq_len, n_examples=n, seed=seed)
    save_task(out, gen_task(spec))
    click.echo(f"wrote {n} examples to {out}")


@main.command("train-toy")
@click.option("--task", type=click.Path(exists=True), required=True)
@click.option("--layers", type=int, default=8, show_default=True)
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--heads", type=int, default=4, show_default=True)
@click.option("--vocab", type=int, default=64, show_default=True)
@click.option("--steps", type=int, default=1200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--accuracy-gate", type=float, default=0.95, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def train_toy_cmd(task, layers, dim, heads, vocab, steps, seed, accuracy_gate, out):
    """Train a toy base model on a task and write a checkpoint."""
    cfg = ModelConfig(n_layers=layers, d_model=dim, n_heads=heads, d_ff=4 * dim, vocab_size=vocab)
    ckpt, acc = train_toy_model(load_task(task), cfg, steps=steps, seed=seed, accuracy_gate=accuracy_gate)
    save_checkpoint(out, ckpt)
    click.echo(f"held-out accuracy {acc:.3f}; wrote {out}")


@main.command("train-lens")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--task", type=click.Path(exists=True), required=True)
@click.option("--layer", default="all", show_default=True, help="layer index or 'all'")
@click.option("--target", type=click.Choice(["spade", "final"]), default="spade", show_default=True)
@click.option("--position-mode", type=click.Choice(["compact", "original"]), default="compact", show_default=True)
@click.option("--steps", type=int, default=500, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="output directory for .lens files")
def train_lens_cmd(ckpt, task, layer, target, position_mode, steps, seed, out):
    """Distill per-layer affine lenses against reduced-pass or final targets."""
    model = load_checkpoint(ckpt)
    dataset = load_task(task)
    target_kind = TargetKind.SPADE_TARGET if target == "spade" else TargetKind.FINAL_TARGET
    mode = PositionMode(position_mode)
    layers = list(range(1, model.config.n_layers + 1)) if layer == "all" else [int(layer)]
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = out_dir / "teacher_cache"
    cache_dir.mkdir(exist_ok=True)
    ckpt_hash = checkpoint_hash(model)
    dataset_id = Path(task).name
    for l in layers:
        key = teacher_cache_key(ckpt_hash, dataset_id, l, target_kind, mode)
        cache_path = cache_dir / f"{key}.tch"
        if cache_path.exists():
            _, samples = load_teacher_cache(cache_path)
        else:
            samples = collect_samples(model, dataset, l, target_kind, mode)
            save_teacher_cache(cache_path, samples, ckpt_hash=ckpt_hash, dataset_id=dataset_id, position_mode=mode)
        lens = train_linear_map(model, samples, TrainConfig(steps=steps, seed=seed))
        save_lens_map(out_dir / map_filename(target_kind, l), lens)
        click.echo(f"layer {l}: final loss {lens.train_loss:.4f}")


@main.command("eval-lens")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--task", type=click.Path(exists=True), required=True)
@click.option("--maps", type=click.Path(), default=None, help="directory of .lens files")
@click.option("--lenses", default="logitlens,spade,spadenos", show_default=True)
@click.option("--position-mode", type=click.Choice(["compact", "original"]), default="compact", show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--out", type=click.Path(), required=True)
def eval_lens_cmd(ckpt, task, maps, lenses, position_mode, fmt, out):
    """Layer-wise accuracy/perplexity report for the selected lenses."""
    model = load_checkpoint(ckpt)
    kinds = [_SOURCE_BY_NAME[name.strip()] for name in lenses.split(",") if name.strip()]
    lens_maps = load_maps_dir(maps) if maps else {}
    report = eval_layerwise(model, lens_maps, load_task(task), kinds, PositionMode(position_mode))
    emit_report(report, fmt, out)
    click.echo(f"naive accuracy {report.naive_accuracy:.3f}; wrote {out}")


@main.command("run-exit")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--maps", type=click.Path(exists=True), required=True)
@click.option("--task", type=click.Path(exists=True), required=True)
@click.option("--threshold", type=float, required=True)
@click.option("--interval", type=int, default=2, show_default=True)
@click.option("--metric", type=click.Choice(["entropy", "top2"]), default="entropy", show_default=True)
@click.option("--min-exit-layer", type=int, default=1, show_default=True)
@click.option("--position-mode", type=click.Choice(["compact", "original"]), default="compact", show_default=True)
@click.option("--out", type=click.Path(), required=True)
def run_exit_cmd(ckpt, maps, task, threshold, interval, metric, min_exit_layer, position_mode, out):
    """Run the adaptive early-exit loop per example; write JSONL traces."""
    model = load_checkpoint(ckpt)
    lens_maps = load_maps_dir(maps).get(Source.LSPADE)
    if not lens_maps:
        raise ConfigError(f"no lspade maps in {maps}")
    cfg = ExitConfig(
        threshold=threshold,
        interval=interval,
        metric=Metric(metric),
        position_mode=PositionMode(position_mode),
        min_exit_layer=min_exit_layer,
    )
    with open(out, "w") as f:
        for prompt, gold in load_task(task):
            trace = run_spade_exit(model, lens_maps, prompt, cfg)
            rec = trace.to_json_record()
            rec["gold"] = gold
            f.write(json.dumps(rec) + "\n")
    click.echo(f"wrote traces to {out}")


@main.command("sweep-exit")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--maps", type=click.Path(exists=True), required=True)
@click.option("--task", type=click.Path(exists=True), required=True)
@click.option("--thresholds", required=True, help="comma-separated threshold list")
@click.option("--interval", type=int, default=2, show_default=True)
@click.option("--metric", type=click.Choice(["entropy", "top2"]), default="entropy", show_default=True)
@click.option("--min-exit-layer", type=int, default=1, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--out", type=click.Path(), required=True)
def sweep_exit_cmd(ckpt, maps, task, thresholds, interval, metric, min_exit_layer, fmt, out):
    """Threshold sweep: accuracy, mean exit layer, and mean op counts per T."""
    model = load_checkpoint(ckpt)
    lens_maps = load_maps_dir(maps).get(Source.LSPADE)
    if not lens_maps:
        raise ConfigError(f"no lspade maps in {maps}")
    ts = [float(t) for t in thresholds.split(",")]
    base = ExitConfig(threshold=0.0, interval=interval, metric=Metric(metric), min_exit_layer=min_exit_layer)
    report = eval_exit_sweep(model, lens_maps, load_task(task), ts, base)
    emit_report(report, fmt, out)
    click.echo(f"wrote sweep to {out}")


@main.command("eval-cross")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--maps-from", type=click.Path(exists=True), required=True, help="maps trained on another task")
@click.option("--task", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--out", type=click.Path(), required=True)
def eval_cross_cmd(ckpt, maps_from, task, fmt, out):
    """Evaluate foreign-trained linear lenses on this task."""
    model = load_checkpoint(ckpt)
    report = eval_cross_task(
        model,
        load_maps_dir(maps_from),
        load_task(task),
        train_task_id=str(maps_from),
        eval_task_id=str(task),
    )
    emit_report(report, fmt, out)
    click.echo(f"wrote cross-task report to {out}")


if __name__ == "__main__":
    main()
