"""Train a desk-scale base model on a synthetic task so the lenses have
something to probe. The torch module here mirrors the engine's block math
exactly (pre-norm RMSNorm, interleaved-pair rotary, SwiGLU); the trained
weights are exported to the neutral checkpoint and all evaluation runs on
the engine side."""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ConvergenceError
from .model import ModelCheckpoint, ModelConfig, canonical_tensor_shapes
from .tensor import F32


class _RMSNorm(nn.Module):
    def __init__(self, d: int, eps: float):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(d))
        self.eps = eps

    def forward(self, x):
        return x / torch.sqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


def _rope(x: torch.Tensor, theta: float) -> torch.Tensor:
    # x: [batch, n, heads, d_head]; interleaved consecutive pairs
    b, n, h, dh = x.shape
    idx = torch.arange(dh // 2, dtype=torch.float64)
    freqs = theta ** (-2.0 * idx / dh)
    pos = torch.arange(n, dtype=torch.float64)
    angles = torch.outer(pos, freqs)  # [n, dh/2]
    cos = angles.cos().to(x.dtype)[None, :, None, :]
    sin = angles.sin().to(x.dtype)[None, :, None, :]
    pairs = x.reshape(b, n, h, dh // 2, 2)
    even, odd = pairs[..., 0], pairs[..., 1]
    out = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1)
    return out.reshape(b, n, h, dh)


class _Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, ff = cfg.d_model, cfg.d_ff
        self.cfg = cfg
        self.attn_norm = _RMSNorm(d, cfg.norm_eps)
        self.wq = nn.Linear(d, d, bias=False)
        self.wk = nn.Linear(d, d, bias=False)
        self.wv = nn.Linear(d, d, bias=False)
        self.wo = nn.Linear(d, d, bias=False)
        self.mlp_norm = _RMSNorm(d, cfg.norm_eps)
        self.w_up = nn.Linear(d, ff, bias=False)
        self.w_gate = nn.Linear(d, ff, bias=False)
        self.w_down = nn.Linear(ff, d, bias=False)

    def forward(self, x):
        cfg = self.cfg
        b, n, d = x.shape
        h = self.attn_norm(x)
        q = _rope(self.wq(h).view(b, n, cfg.n_heads, cfg.d_head), cfg.rope_theta)
        k = _rope(self.wk(h).view(b, n, cfg.n_heads, cfg.d_head), cfg.rope_theta)
        v = self.wv(h).view(b, n, cfg.n_heads, cfg.d_head)
        q, k, v = (t.transpose(1, 2) for t in (q, k, v))  # [b, heads, n, dh]
        scores = q @ k.transpose(-1, -2) / math.sqrt(cfg.d_head)
        mask = torch.triu(torch.ones(n, n, dtype=torch.bool), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1) @ v  # [b, heads, n, dh]
        attn = attn.transpose(1, 2).reshape(b, n, d)
        x = x + self.wo(attn)
        h = self.mlp_norm(x)
        x = x + self.w_down(torch.nn.functional.silu(self.w_gate(h)) * self.w_up(h))
        return x


class ToyTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.n_layers))
        self.final_norm = _RMSNorm(cfg.d_model, cfg.norm_eps)
        self.unembed = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        x = self.embed(tokens)
        for block in self.blocks:
            x = block(x)
        return self.unembed(self.final_norm(x))


def to_checkpoint(model: ToyTransformer) -> ModelCheckpoint:
    cfg = model.cfg
    sd = {k: v.detach().numpy().astype(F32) for k, v in model.state_dict().items()}
    tensors = {"embed": sd["embed.weight"], "final_norm": sd["final_norm.weight"], "unembed": sd["unembed.weight"]}
    for l in range(cfg.n_layers):
        p = f"blocks.{l}."
        tensors[f"layers.{l}.attn_norm"] = sd[p + "attn_norm.weight"]
        tensors[f"layers.{l}.mlp_norm"] = sd[p + "mlp_norm.weight"]
        for w in ("wq", "wk", "wv", "wo", "w_up", "w_gate", "w_down"):
            tensors[f"layers.{l}.{w}"] = sd[p + w + ".weight"]
    assert set(tensors) == set(canonical_tensor_shapes(cfg))
    return ModelCheckpoint(config=cfg, tensors=tensors)


def train_toy_model(
    dataset,
    cfg: ModelConfig,
    steps: int = 1200,
    seed: int = 0,
    learning_rate: float = 1e-3,
    batch_size: int = 64,
    holdout_frac: float = 0.2,
    accuracy_gate: float = 0.95,
) -> tuple[ModelCheckpoint, float]:
    """Next-token cross-entropy at the answer position until the held-out
    gold-token accuracy gate is met; fails loudly otherwise. Returns the
    checkpoint and the held-out accuracy."""
    torch.manual_seed(seed)
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # run-to-run determinism
    try:
        n_hold = max(1, int(len(dataset) * holdout_frac))
        train, hold = dataset[:-n_hold], dataset[-n_hold:]
        model = ToyTransformer(cfg)
        opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps, eta_min=learning_rate / 10)
        gen = torch.Generator().manual_seed(seed)

        def batch_tensors(examples):
            prompts = torch.tensor([p for p, _ in examples], dtype=torch.long)
            golds = torch.tensor([g for _, g in examples], dtype=torch.long)
            return prompts, golds

        for step in range(steps):
            idx = torch.randint(0, len(train), (min(batch_size, len(train)),), generator=gen)
            prompts, golds = batch_tensors([train[i] for i in idx.tolist()])
            logits = model(prompts)
            # answer-position loss carries the task; next-token loss over the
            # whole sequence is an auxiliary that regularizes against
            # memorizing whole prompts
            targets = torch.cat([prompts[:, 1:], golds[:, None]], dim=1)
            lm_loss = torch.nn.functional.cross_entropy(
                logits.reshape(-1, logits.shape[-1]), targets.reshape(-1)
            )
            answer_loss = torch.nn.functional.cross_entropy(logits[:, -1, :], golds)
            loss = answer_loss + 0.3 * lm_loss
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            if not torch.isfinite(loss):
                raise ConvergenceError(f"toy training diverged at step {step}", step=step)

        model.eval()
        with torch.no_grad():
            prompts, golds = batch_tensors(hold)
            acc = float((model(prompts)[:, -1, :].argmax(-1) == golds).float().mean())
        if acc < accuracy_gate:
            raise ConvergenceError(
                f"toy model held-out accuracy {acc:.3f} below gate {accuracy_gate}", value=acc
            )
        return to_checkpoint(model), acc
    finally:
        torch.set_num_threads(n_threads)
