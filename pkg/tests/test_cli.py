import json

import pytest
from click.testing import CliRunner

from spade.cli import main


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """A small seeded pipeline driven entirely through the CLI:
    gen-task -> train-toy -> train-lens -> (reports)."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    def run(*args):
        result = runner.invoke(main, list(args), catch_exceptions=False)
        assert result.exit_code == 0, result.output
        return result

    run("gen-task", "--kind", "induction", "--vocab", "32", "--seq-len", "8",
        "--n", "128", "--seed", "3", "--out", str(root / "task.jsonl"))
    run("train-toy", "--task", str(root / "task.jsonl"), "--layers", "4", "--dim", "32",
        "--heads", "2", "--vocab", "32", "--steps", "120", "--seed", "1",
        "--accuracy-gate", "0.0", "--out", str(root / "model.ckpt"))
    run("train-lens", "--ckpt", str(root / "model.ckpt"), "--task", str(root / "task.jsonl"),
        "--layer", "all", "--target", "spade", "--steps", "60", "--seed", "2",
        "--out", str(root / "maps"))
    return root, run


def test_gen_task_output(pipeline_dir):
    root, _ = pipeline_dir
    lines = (root / "task.jsonl").read_text().splitlines()
    assert len(lines) == 128
    rec = json.loads(lines[0])
    assert rec["prompt"][0] == 1
    assert 0 <= rec["gold"] < 32


def test_train_lens_writes_maps(pipeline_dir):
    root, _ = pipeline_dir
    maps = sorted(p.name for p in (root / "maps").glob("*.lens"))
    assert maps == [f"lspade.layer{l:03d}.lens" for l in range(1, 5)]
    assert (root / "maps" / "teacher_cache").exists()


def test_eval_lens(pipeline_dir):
    root, run = pipeline_dir
    out = root / "layerwise.csv"
    run("eval-lens", "--ckpt", str(root / "model.ckpt"), "--task", str(root / "task.jsonl"),
        "--maps", str(root / "maps"), "--lenses", "logitlens,spade,spadenos,lspade",
        "--format", "csv", "--out", str(out))
    header = out.read_text().splitlines()[0]
    assert header == "layer,lens,accuracy,perplexity,mean_entropy,n"


def test_run_exit_traces(pipeline_dir):
    root, run = pipeline_dir
    out = root / "traces.jsonl"
    run("run-exit", "--ckpt", str(root / "model.ckpt"), "--maps", str(root / "maps"),
        "--task", str(root / "task.jsonl"), "--threshold", "10.0", "--interval", "2",
        "--metric", "entropy", "--min-exit-layer", "1", "--out", str(out))
    recs = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(recs) == 128
    for rec in recs[:5]:
        assert set(rec) == {"exit_layer", "checks", "ops", "argmax_token", "entropy_final", "gold"}
        assert rec["exit_layer"] == 2  # threshold above ln V: first scheduled layer


def test_sweep_exit(pipeline_dir):
    root, run = pipeline_dir
    out = root / "sweep.csv"
    run("sweep-exit", "--ckpt", str(root / "model.ckpt"), "--maps", str(root / "maps"),
        "--task", str(root / "task.jsonl"), "--thresholds", "-1.0,1.0,10.0", "--out", str(out))
    lines = out.read_text().splitlines()
    assert lines[0] == "threshold,accuracy,mean_exit_layer,mean_full_ops,mean_reduced_ops"
    assert len(lines) == 4


def test_eval_cross(pipeline_dir):
    root, run = pipeline_dir
    run("gen-task", "--kind", "majority", "--vocab", "32", "--seq-len", "8",
        "--n", "64", "--seed", "8", "--out", str(root / "task_b.jsonl"))
    out = root / "cross.csv"
    run("eval-cross", "--ckpt", str(root / "model.ckpt"), "--maps-from", str(root / "maps"),
        "--task", str(root / "task_b.jsonl"), "--out", str(out))
    assert out.read_text().startswith("layer,lens,accuracy")


def test_teacher_cache_reused(pipeline_dir):
    root, run = pipeline_dir
    caches_before = sorted((root / "maps" / "teacher_cache").iterdir())
    run("train-lens", "--ckpt", str(root / "model.ckpt"), "--task", str(root / "task.jsonl"),
        "--layer", "2", "--target", "spade", "--steps", "30", "--seed", "2",
        "--out", str(root / "maps"))
    caches_after = sorted((root / "maps" / "teacher_cache").iterdir())
    assert caches_before == caches_after
