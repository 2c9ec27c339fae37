import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spade.model import random_checkpoint
from spade.tasks import TaskKind, TaskSpec, gen_task
from spade.tensor import Rng

from model_configs import TINY_CONFIG, TOY_CONFIG  # noqa: E402 (tests dir on sys.path)



@pytest.fixture(scope="session")
def tiny_ckpt():
    """Seeded random tiny model (L=2, d=8, V=16) for oracle comparisons."""
    return random_checkpoint(TINY_CONFIG, Rng(1234))


@pytest.fixture(scope="session")
def toy_ckpt():
    """Seeded random toy model (L=8, d=64, V=64); untrained."""
    return random_checkpoint(TOY_CONFIG, Rng(99))


@pytest.fixture(scope="session")
def induction_task():
    spec = TaskSpec(kind=TaskKind.INDUCTION_RECALL, vocab_size=64, seq_len=10, n_examples=8192, seed=7)
    return gen_task(spec)


@pytest.fixture(scope="session")
def trained_toy(induction_task):
    """Toy model trained on the induction task to the accuracy gate.
    Session-scoped: several suites probe the same trained model."""
    from spade.toy_train import train_toy_model

    ckpt, acc = train_toy_model(induction_task, TOY_CONFIG, steps=1200, seed=0)
    return ckpt, acc, induction_task


@pytest.fixture(scope="session")
def trained_lens_maps(trained_toy):
    """Distilled lens maps (both target kinds, all layers) for the trained
    toy model, fit on a training slice disjoint from eval slices."""
    from spade.distill import TrainConfig, collect_samples, train_linear_map
    from spade.lenses import Source, TargetKind

    ckpt, _, task = trained_toy
    train_slice = task[:256]
    maps = {Source.LSPADE: {}, Source.TUNED_LENS: {}}
    for target, source in ((TargetKind.SPADE_TARGET, Source.LSPADE),
                           (TargetKind.FINAL_TARGET, Source.TUNED_LENS)):
        for l in range(1, ckpt.config.n_layers + 1):
            samples = collect_samples(ckpt, train_slice, l, target)
            maps[source][l] = train_linear_map(ckpt, samples, TrainConfig(steps=400, seed=1))
    return maps
