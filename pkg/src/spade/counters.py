"""Op accounting: (token x block) application counts, the cost metric."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class OpCounter:
    full_token_block_ops: int = 0
    reduced_token_block_ops: int = 0
    lens_evals: int = 0

    def add_full(self, tokens: int) -> None:
        self.full_token_block_ops += tokens

    def add_reduced(self, tokens: int) -> None:
        self.reduced_token_block_ops += tokens

    def add_lens(self) -> None:
        self.lens_evals += 1
