import math

import numpy as np
import pytest

from spade.distill import TrainConfig, collect_samples, train_linear_map
from spade.early_exit import (
    ExitConfig,
    Metric,
    cost_model,
    first_scheduled_layer,
    run_spade_exit,
    scheduled_layers,
)
from spade.errors import ConfigError, PreconditionError
from spade.lenses import LinearLensMap, Source, TargetKind, entropy, linear_lens_apply, spade
from spade.model import forward_full
from spade.tensor import Rng

BOS = 1


def identity_maps(ckpt, layers=None):
    d = ckpt.config.d_model
    layers = layers if layers is not None else range(1, ckpt.config.n_layers + 1)
    return {
        l: LinearLensMap(layer=l, A=np.eye(d, dtype=np.float32), b=np.zeros(d, dtype=np.float32),
                         target_kind=TargetKind.SPADE_TARGET)
        for l in layers
    }


@pytest.fixture(scope="module")
def tokens():
    return [BOS, 4, 9, 2, 11]


class TestNeverExit:
    def test_matches_naive_forward_bit_exactly(self, tiny_ckpt, tokens):
        cfg = ExitConfig(threshold=-1.0, interval=1, metric=Metric.ENTROPY)
        trace = run_spade_exit(tiny_ckpt, identity_maps(tiny_ckpt), tokens, cfg)
        _, logits, probs = forward_full(tiny_ckpt, tokens)
        assert trace.exit_layer is None
        assert trace.final_distribution.source is Source.FINAL
        np.testing.assert_array_equal(trace.final_distribution.logits, logits[-1])
        np.testing.assert_array_equal(trace.final_distribution.probs, probs[-1])

    def test_op_counts(self, tiny_ckpt, tokens):
        cfg = ExitConfig(threshold=-1.0, interval=1)
        trace = run_spade_exit(tiny_ckpt, identity_maps(tiny_ckpt), tokens, cfg)
        n, L = len(tokens), tiny_ckpt.config.n_layers
        assert trace.counter.full_token_block_ops == n * L
        assert trace.counter.reduced_token_block_ops == 0


class TestAlwaysExit:
    def test_exits_at_first_scheduled_layer(self, tiny_ckpt, tokens):
        V = tiny_ckpt.config.vocab_size
        for interval, min_exit in [(1, 1), (2, 0), (2, 1), (1, 2)]:
            cfg = ExitConfig(threshold=math.log(V) + 1.0, interval=interval, min_exit_layer=min_exit)
            trace = run_spade_exit(tiny_ckpt, identity_maps(tiny_ckpt), tokens, cfg)
            l0 = interval * math.ceil(max(min_exit, 1) / interval)
            assert trace.exit_layer == l0

    def test_final_dist_equals_spade_bit_exactly(self, tiny_ckpt, tokens):
        V = tiny_ckpt.config.vocab_size
        cfg = ExitConfig(threshold=math.log(V) + 1.0, interval=1)
        trace = run_spade_exit(tiny_ckpt, identity_maps(tiny_ckpt), tokens, cfg)
        state, _, _ = forward_full(tiny_ckpt, tokens)
        expected = spade(tiny_ckpt, state, trace.exit_layer, cfg.position_mode)
        np.testing.assert_array_equal(trace.final_distribution.logits, expected.logits)
        np.testing.assert_array_equal(trace.final_distribution.probs, expected.probs)
        assert trace.final_distribution.source is Source.SPADE
        assert trace.final_distribution.layer == trace.exit_layer


class TestDecisionRule:
    def test_exit_layer_matches_offline_sweep(self, tiny_ckpt, tokens):
        """Replay the decision rule from independently computed confidences."""
        maps = identity_maps(tiny_ckpt)
        state, _, _ = forward_full(tiny_ckpt, tokens)
        answer = len(tokens) - 1
        offline = {
            l: entropy(linear_lens_apply(tiny_ckpt, maps[l], state.hidden[l][answer]))
            for l in range(1, tiny_ckpt.config.n_layers + 1)
        }
        for T in (1.0, 1.5, 2.0, 2.5):
            cfg = ExitConfig(threshold=T, interval=1)
            trace = run_spade_exit(tiny_ckpt, maps, tokens, cfg)
            expected = next((l for l in sorted(offline) if offline[l] <= T), None)
            assert trace.exit_layer == expected

    def test_trained_maps_decision(self, tiny_ckpt):
        """Same replay with actually distilled maps mid-range threshold."""
        rng = Rng(31)
        v = tiny_ckpt.config.vocab_size
        ds = [([BOS] + [rng.randint(0, v) for _ in range(4)], rng.randint(0, v)) for _ in range(8)]
        maps = {}
        for l in range(1, tiny_ckpt.config.n_layers + 1):
            samples = collect_samples(tiny_ckpt, ds, l, TargetKind.SPADE_TARGET)
            maps[l] = train_linear_map(tiny_ckpt, samples, TrainConfig(steps=100))
        prompt = ds[0][0]
        state, _, _ = forward_full(tiny_ckpt, prompt)
        offline = {
            l: entropy(linear_lens_apply(tiny_ckpt, maps[l], state.hidden[l][len(prompt) - 1]))
            for l in maps
        }
        mid = sorted(offline.values())[len(offline) // 2]
        trace = run_spade_exit(tiny_ckpt, maps, prompt, ExitConfig(threshold=mid, interval=1))
        expected = next((l for l in sorted(offline) if offline[l] <= mid), None)
        assert trace.exit_layer == expected

    def test_monotone_threshold(self, tiny_ckpt, tokens):
        maps = identity_maps(tiny_ckpt)
        prev_exit = None
        L = tiny_ckpt.config.n_layers
        for T in (-1.0, 0.5, 1.0, 2.0, 3.0, 10.0):
            trace = run_spade_exit(tiny_ckpt, maps, tokens, ExitConfig(threshold=T, interval=1))
            e = L + 1 if trace.exit_layer is None else trace.exit_layer
            if prev_exit is not None:
                assert e <= prev_exit
            prev_exit = e

    def test_top2_metric_direction(self, tiny_ckpt, tokens):
        maps = identity_maps(tiny_ckpt)
        # gap >= 0 always, so threshold -1 always exits; threshold 2 never
        t_always = run_spade_exit(tiny_ckpt, maps, tokens, ExitConfig(threshold=-1.0, interval=1, metric=Metric.TOP2_GAP))
        assert t_always.exit_layer == 1
        t_never = run_spade_exit(tiny_ckpt, maps, tokens, ExitConfig(threshold=2.0, interval=1, metric=Metric.TOP2_GAP))
        assert t_never.exit_layer is None


class TestOpAccounting:
    def test_cost_model_hand_case(self):
        c = cost_model(16, 8, 4, 2, 0)
        assert c.full_token_block_ops == 64
        assert c.reduced_token_block_ops == 8
        assert c.lens_evals == 2

    def test_cost_model_no_exit(self):
        c = cost_model(16, 8, None, 2, 0)
        assert c.full_token_block_ops == 128
        assert c.reduced_token_block_ops == 0

    def test_measured_equals_predicted_sweep(self, tiny_ckpt):
        rng = Rng(40)
        L = tiny_ckpt.config.n_layers
        v = tiny_ckpt.config.vocab_size
        maps = identity_maps(tiny_ckpt)
        for _ in range(60):
            n = rng.randint(2, 7)
            interval = rng.randint(1, 3)
            min_exit = rng.randint(0, L)
            T = -1.0 + 6.0 * rng.uniform()
            tokens = [BOS] + [rng.randint(0, v) for _ in range(n - 1)]
            cfg = ExitConfig(threshold=T, interval=interval, min_exit_layer=min_exit)
            trace = run_spade_exit(tiny_ckpt, maps, tokens, cfg)
            pred = cost_model(n, L, trace.exit_layer, interval, min_exit)
            assert trace.counter == pred

    def test_reduced_cost_independent_of_n(self, tiny_ckpt):
        V = tiny_ckpt.config.vocab_size
        maps = identity_maps(tiny_ckpt)
        cfg = ExitConfig(threshold=math.log(V) + 1.0, interval=1)
        costs = set()
        for n in (2, 4, 6):
            tokens = [BOS] + list(range(2, 2 + n - 1))
            trace = run_spade_exit(tiny_ckpt, maps, tokens, cfg)
            costs.add(trace.counter.reduced_token_block_ops)
        assert len(costs) == 1


class TestValidation:
    def test_missing_map_fails_before_compute(self, tiny_ckpt, tokens):
        maps = identity_maps(tiny_ckpt, layers=[1])
        with pytest.raises(ConfigError):
            run_spade_exit(tiny_ckpt, maps, tokens, ExitConfig(threshold=-1.0, interval=1))

    def test_requires_bos(self, tiny_ckpt):
        with pytest.raises(PreconditionError):
            run_spade_exit(tiny_ckpt, identity_maps(tiny_ckpt), [2, 3], ExitConfig(threshold=0.0))

    def test_schedule(self):
        assert scheduled_layers(8, 2, 1) == [2, 4, 6, 8]
        assert scheduled_layers(8, 3, 4) == [6]
        assert first_scheduled_layer(8, 2, 3) == 4


class TestTrace:
    def test_json_record(self, tiny_ckpt, tokens):
        V = tiny_ckpt.config.vocab_size
        cfg = ExitConfig(threshold=math.log(V) + 1.0, interval=2)
        trace = run_spade_exit(tiny_ckpt, identity_maps(tiny_ckpt), tokens, cfg)
        rec = trace.to_json_record()
        assert rec["exit_layer"] == 2
        assert rec["ops"]["full"] == len(tokens) * 2
        assert rec["ops"]["reduced"] == 2 * (tiny_ckpt.config.n_layers - 2)
        assert rec["ops"]["lens"] == 1
        assert isinstance(rec["argmax_token"], int)
        assert rec["entropy_final"] >= 0.0
        assert rec["checks"] == [[l, v] for l, v in trace.checked_layers]

    def test_source_invariant(self, tiny_ckpt, tokens):
        maps = identity_maps(tiny_ckpt)
        never = run_spade_exit(tiny_ckpt, maps, tokens, ExitConfig(threshold=-1.0, interval=1))
        assert never.final_distribution.source is Source.FINAL
        always = run_spade_exit(tiny_ckpt, maps, tokens, ExitConfig(threshold=100.0, interval=1))
        assert always.final_distribution.source is Source.SPADE
        assert always.final_distribution.layer == always.exit_layer
