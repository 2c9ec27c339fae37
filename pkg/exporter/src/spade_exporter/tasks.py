"""Dataset pre-tokenization into the engine's task JSONL format.

Each output line is {"prompt": [token ids], "gold": token id}. The prompt
starts with the tokenizer's start-of-sequence id. Items whose gold answer
tokenizes to more than one token are dropped and counted: the engine scores
a single next-token prediction, so multi-token answers are out of scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ExportError

TEMPLATES = {
    # question answering: record needs "question" and "answer"
    "qa": "Question: {question} Answer:",
    # plain continuation: record needs "text" and "answer"
    "completion": "{text}",
}


@dataclass
class TaskExportResult:
    written: int
    dropped: int


def _load_records(dataset_path) -> list[dict]:
    path = Path(dataset_path)
    if not path.is_file():
        raise ExportError(f"dataset file not found: {path}")
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ExportError(f"{path}:{line_no}: not valid JSON ({e})") from e
    return records


def export_task(
    dataset_path,
    tokenizer_source: str,
    template: str,
    out_path,
    expected_vocab: int | None = None,
) -> TaskExportResult:
    if template not in TEMPLATES:
        raise ExportError(f"unknown template {template!r}; available: {sorted(TEMPLATES)}")
    from transformers import AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(tokenizer_source)
    if tokenizer.bos_token_id is None:
        raise ExportError("tokenizer has no start-of-sequence token")
    if expected_vocab is not None and len(tokenizer) > expected_vocab:
        raise ExportError(
            f"tokenizer vocab {len(tokenizer)} exceeds checkpoint vocab {expected_vocab}"
        )
    bos = int(tokenizer.bos_token_id)

    fmt = TEMPLATES[template]
    written = dropped = 0
    with open(out_path, "w", encoding="utf-8") as out:
        for rec in _load_records(dataset_path):
            try:
                prompt_text = fmt.format(**rec)
                gold_text = rec["answer"]
            except KeyError as e:
                raise ExportError(f"record missing field {e} required by template {template!r}") from e
            gold_ids = tokenizer.encode(gold_text, add_special_tokens=False)
            if len(gold_ids) != 1:
                dropped += 1
                continue
            prompt_ids = [bos] + tokenizer.encode(prompt_text, add_special_tokens=False)
            out.write(json.dumps({"prompt": prompt_ids, "gold": gold_ids[0]}) + "\n")
            written += 1
    return TaskExportResult(written=written, dropped=dropped)
