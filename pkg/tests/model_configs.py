"""Shared model configurations for the engine test suite."""

from spade.model import ModelConfig

TINY_CONFIG = ModelConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16, vocab_size=16)
TOY_CONFIG = ModelConfig(n_layers=8, d_model=64, n_heads=4, d_ff=128, vocab_size=64)
