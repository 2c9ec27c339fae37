"""Synthetic single-token tasks (desk-scale stand-ins for the QA datasets)
plus the JSONL task-file format shared with external exporters."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import ConfigError
from .tensor import Rng


class TaskKind(str, Enum):
    INDUCTION_RECALL = "induction"
    MAJORITY_VOTE = "majority"
    EXTERNAL_TOKENS = "external"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    vocab_size: int = 64
    seq_len: int = 16
    n_examples: int = 512
    seed: int = 0
    bos_token_id: int = 1
    params: dict = field(default_factory=dict)


Example = tuple[list[int], int]  # (prompt token ids, gold answer token id)


def gen_task(spec: TaskSpec) -> list[Example]:
    if spec.kind is TaskKind.EXTERNAL_TOKENS:
        path = spec.params.get("path")
        if not path:
            raise ConfigError("external task needs params['path']")
        return load_task(path)
    rng = Rng(spec.seed)
    gen = _gen_induction if spec.kind is TaskKind.INDUCTION_RECALL else _gen_majority
    return [gen(spec, rng) for _ in range(spec.n_examples)]


def _gen_induction(spec: TaskSpec, rng: Rng) -> Example:
    """bos, k1 v1 ... km vm, query-key; gold is the queried pair's value.

    Keys and values come from disjoint id ranges above bos so the map is
    unambiguous within an example."""
    n_pairs = (spec.seq_len - 2) // 2
    if n_pairs < 1:
        raise ConfigError(f"seq_len {spec.seq_len} too short for a key/value pair")
    lo = spec.bos_token_id + 1
    span = spec.vocab_size - lo
    n_keys_pool = span // 2
    if n_keys_pool < n_pairs:
        raise ConfigError(f"vocab {spec.vocab_size} too small for {n_pairs} distinct keys")
    key_lo, val_lo = lo, lo + n_keys_pool
    keys = list(range(key_lo, key_lo + n_keys_pool))
    rng.shuffle(keys)
    keys = keys[:n_pairs]
    vals = [rng.randint(val_lo, spec.vocab_size) for _ in range(n_pairs)]
    prompt = [spec.bos_token_id]
    for k, v in zip(keys, vals):
        prompt += [k, v]
    qi = rng.randint(0, n_pairs)
    prompt.append(keys[qi])
    return prompt, vals[qi]


def _gen_majority(spec: TaskSpec, rng: Rng) -> Example:
    """bos then class tokens; gold is the modal token (ties re-rolled)."""
    n_classes = int(spec.params.get("n_classes", 4))
    lo = spec.bos_token_id + 1
    if lo + n_classes > spec.vocab_size:
        raise ConfigError(f"vocab {spec.vocab_size} too small for {n_classes} classes")
    body_len = spec.seq_len - 1
    while True:
        body = [rng.randint(lo, lo + n_classes) for _ in range(body_len)]
        counts = {t: body.count(t) for t in set(body)}
        best = max(counts.values())
        winners = [t for t, c in counts.items() if c == best]
        if len(winners) == 1:
            return [spec.bos_token_id] + body, winners[0]


def save_task(path, dataset: list[Example]) -> None:
    with open(path, "w") as f:
        for prompt, gold in dataset:
            f.write(json.dumps({"prompt": list(prompt), "gold": int(gold)}) + "\n")


def load_task(path) -> list[Example]:
    dataset = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        dataset.append((list(rec["prompt"]), int(rec["gold"])))
    return dataset
