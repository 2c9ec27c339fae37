"""Reference-runtime evaluation: run prompts through the source model with
`transformers` and record the last-position logits, so an exported checkpoint
can be checked against the runtime it came from."""

from __future__ import annotations

import json


def reference_logits(source: str, prompts: list[list[int]]) -> list[list[float]]:
    """Last-position logits from the source runtime for each prompt."""
    import torch
    from transformers import AutoModelForCausalLM

    model = AutoModelForCausalLM.from_pretrained(source, dtype=torch.float32)
    model.eval()
    out = []
    with torch.no_grad():
        for prompt in prompts:
            ids = torch.tensor([prompt], dtype=torch.long)
            logits = model(input_ids=ids).logits[0, -1]
            out.append([float(x) for x in logits])
    return out


def write_reference_logits(source: str, prompts_path, out_path) -> int:
    with open(prompts_path, encoding="utf-8") as f:
        prompts = [json.loads(line)["prompt"] for line in f if line.strip()]
    logits = reference_logits(source, prompts)
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump({"source": source, "logits": logits}, f)
    return len(prompts)
