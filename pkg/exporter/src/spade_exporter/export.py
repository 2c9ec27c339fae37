"""Checkpoint conversion into the neutral SPADECKP container.

Supported sources:
  * a directory holding a LLaMA-family model in the standard `transformers`
    layout (config.json + weights), local path or hub id;
  * an existing SPADECKP file, which is re-serialized canonically (a no-op
    round-trip used to prove the writer is byte-stable).

The engine applies rotary position factors to interleaved coordinate pairs
(2i, 2i+1) of each head, while LLaMA-family checkpoints pair coordinate i
with i + d_head/2 ("rotate half"). The two conventions differ only by a
fixed permutation of the head dimension, so the exporter permutes the rows
of the query/key projections once at export time; attention scores are then
identical because the same permutation is applied to both q and k.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import CHECKPOINT_MAGIC, read_container, write_container
from .errors import ExportError

LAYER_TENSORS = ("attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_up", "w_gate", "w_down")

CONFIG_FIELDS = (
    "n_layers",
    "d_model",
    "n_heads",
    "d_ff",
    "vocab_size",
    "rope_theta",
    "norm_eps",
    "bos_token_id",
    "max_seq_len",
)


@dataclass
class ExportManifest:
    """What to convert and how; the name map and config are filled in during
    export and recorded for inspection."""

    source: str
    target: str
    dtype_policy: str = "downcast-to-f32"
    name_map: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)


def canonical_tensor_shapes(config: dict) -> dict[str, tuple[int, ...]]:
    d, ff, v = config["d_model"], config["d_ff"], config["vocab_size"]
    shapes: dict[str, tuple[int, ...]] = {"embed": (v, d)}
    per_layer = {
        "attn_norm": (d,),
        "wq": (d, d),
        "wk": (d, d),
        "wv": (d, d),
        "wo": (d, d),
        "mlp_norm": (d,),
        "w_up": (ff, d),
        "w_gate": (ff, d),
        "w_down": (d, ff),
    }
    for l in range(config["n_layers"]):
        for name in LAYER_TENSORS:
            shapes[f"layers.{l}.{name}"] = per_layer[name]
    shapes["final_norm"] = (d,)
    shapes["unembed"] = (v, d)
    return shapes


def content_hash(config: dict, tensors: dict[str, np.ndarray]) -> str:
    """Hash over the config JSON plus tensor bytes in sorted name order; the
    engine computes the identical digest for a loaded checkpoint."""
    h = hashlib.sha256()
    h.update(json.dumps(config, sort_keys=True).encode())
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    return h.hexdigest()


def rope_permutation(d_model: int, n_heads: int) -> np.ndarray:
    """Per-head row permutation taking half-split rotary pairing (i, i+d_h/2)
    to the engine's interleaved pairing (2i, 2i+1)."""
    dh = d_model // n_heads
    perm = np.empty(d_model, dtype=np.int64)
    for h in range(n_heads):
        base = h * dh
        for i in range(dh // 2):
            perm[base + 2 * i] = base + i
            perm[base + 2 * i + 1] = base + i + dh // 2
    return perm


def extract_config(hf_config) -> dict:
    if getattr(hf_config, "model_type", None) != "llama":
        raise ExportError(f"unsupported architecture {getattr(hf_config, 'model_type', '?')!r}; "
                          "only the LLaMA family (rmsnorm + rotary + gated MLP) is supported")
    heads = hf_config.num_attention_heads
    kv_heads = getattr(hf_config, "num_key_value_heads", heads)
    if kv_heads != heads:
        raise ExportError(f"grouped-query attention not supported "
                          f"(num_key_value_heads={kv_heads} != num_attention_heads={heads})")
    d = hf_config.hidden_size
    if d % heads != 0:
        raise ExportError(f"hidden_size {d} not divisible by num_attention_heads {heads}")
    head_dim = getattr(hf_config, "head_dim", None) or d // heads
    if head_dim != d // heads:
        raise ExportError(f"non-standard head_dim {head_dim} (expected {d // heads})")
    if head_dim % 2 != 0:
        raise ExportError(f"head dimension must be even for rotary pairing, got {head_dim}")
    if getattr(hf_config, "attention_bias", False) or getattr(hf_config, "mlp_bias", False):
        raise ExportError("projection biases are not supported")
    return {
        "n_layers": hf_config.num_hidden_layers,
        "d_model": d,
        "n_heads": heads,
        "d_ff": hf_config.intermediate_size,
        "vocab_size": hf_config.vocab_size,
        "rope_theta": float(getattr(hf_config, "rope_theta", 10000.0)),
        "norm_eps": float(hf_config.rms_norm_eps),
        "bos_token_id": int(hf_config.bos_token_id),
        "max_seq_len": int(hf_config.max_position_embeddings),
    }


def build_name_map(n_layers: int) -> dict[str, str]:
    """Source tensor name -> canonical name; each canonical name exactly once."""
    m = {"model.embed_tokens.weight": "embed"}
    per_layer = {
        "input_layernorm.weight": "attn_norm",
        "self_attn.q_proj.weight": "wq",
        "self_attn.k_proj.weight": "wk",
        "self_attn.v_proj.weight": "wv",
        "self_attn.o_proj.weight": "wo",
        "post_attention_layernorm.weight": "mlp_norm",
        "mlp.up_proj.weight": "w_up",
        "mlp.gate_proj.weight": "w_gate",
        "mlp.down_proj.weight": "w_down",
    }
    for l in range(n_layers):
        for src, dst in per_layer.items():
            m[f"model.layers.{l}.{src}"] = f"layers.{l}.{dst}"
    m["model.norm.weight"] = "final_norm"
    m["lm_head.weight"] = "unembed"
    return m


def _is_spadeckp(path: str) -> bool:
    p = Path(path)
    if not p.is_file():
        return False
    with open(p, "rb") as f:
        return f.read(8) == CHECKPOINT_MAGIC


def _round_trip(manifest: ExportManifest) -> dict:
    header, tensors = read_container(manifest.source, CHECKPOINT_MAGIC)
    config = header["config"]
    ordered = _ordered_and_checked(config, tensors)
    manifest.config = config
    manifest.name_map = {name: name for name in ordered}
    return _write(manifest.target, config, ordered)


def _ordered_and_checked(config: dict, tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    shapes = canonical_tensor_shapes(config)
    missing = sorted(set(shapes) - set(tensors))
    if missing:
        raise ExportError(f"unmapped canonical tensors: {missing[:5]}")
    for name, shape in shapes.items():
        got = tuple(tensors[name].shape)
        if got != shape:
            raise ExportError(f"{name}: shape {got} does not match extracted config {shape}")
    return {name: tensors[name] for name in shapes}


def _write(target, config: dict, ordered: dict[str, np.ndarray]) -> dict:
    meta = {"config": config, "content_hash": content_hash(config, ordered)}
    write_container(target, CHECKPOINT_MAGIC, meta, ordered)
    return meta


def export_checkpoint(manifest: ExportManifest) -> dict:
    """Convert the manifest's source into a SPADECKP file at its target.

    Returns the written header metadata (config + content hash). Idempotent:
    identical inputs produce identical bytes."""
    if _is_spadeckp(manifest.source):
        return _round_trip(manifest)

    import torch
    from transformers import AutoConfig, AutoModelForCausalLM

    hf_config = AutoConfig.from_pretrained(manifest.source)
    config = extract_config(hf_config)
    model = AutoModelForCausalLM.from_pretrained(manifest.source, dtype=torch.float32)
    model.eval()
    state = {k: v for k, v in model.state_dict().items()}
    if "lm_head.weight" not in state:
        # weight tying: materialize the output projection explicitly
        state["lm_head.weight"] = model.get_output_embeddings().weight.detach()

    name_map = build_name_map(config["n_layers"])
    missing_src = sorted(set(name_map) - set(state))
    if missing_src:
        raise ExportError(f"source is missing expected tensors: {missing_src[:5]}")

    perm = rope_permutation(config["d_model"], config["n_heads"])
    tensors: dict[str, np.ndarray] = {}
    for src, dst in name_map.items():
        arr = state[src].detach().to(torch.float32).cpu().numpy()
        if dst.endswith((".wq", ".wk")):
            arr = arr[perm, :]
        tensors[dst] = np.ascontiguousarray(arr, dtype=np.float32)

    ordered = _ordered_and_checked(config, tensors)
    manifest.config = config
    manifest.name_map = name_map
    return _write(manifest.target, config, ordered)
