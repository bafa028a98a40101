"""Synthetic temporal-order task: determinism, balance, and the blind oracle."""

import numpy as np
import pytest

from spiketim.errors import ConfigurationError
from spiketim.synth import (
    SyntheticTaskSpec,
    _pattern_cells,
    generate_stream,
    order_blind_accuracy,
    synth_temporal_order,
)


class TestSpec:
    def test_odd_grid_rejected(self):
        with pytest.raises(ConfigurationError, match="grid"):
            SyntheticTaskSpec(grid=7)

    def test_single_step_rejected(self):
        with pytest.raises(ConfigurationError, match="num_steps"):
            SyntheticTaskSpec(num_steps=1)


class TestPatterns:
    def test_halves_are_disjoint_and_equal_sized(self):
        a, b = _pattern_cells(8)
        assert len(a) == len(b) == 32
        cells_a = {tuple(c) for c in a}
        cells_b = {tuple(c) for c in b}
        assert cells_a & cells_b == set()
        assert len(cells_a | cells_b) == 64


class TestGeneration:
    def test_stream_deterministic_in_seed_and_index(self):
        spec = SyntheticTaskSpec(num_samples=4, seed=5)
        a = generate_stream(spec, 2)
        b = generate_stream(spec, 2)
        assert np.array_equal(a.events, b.events)
        c = generate_stream(spec, 3)
        assert not np.array_equal(
            a.events[: min(len(a), len(c))], c.events[: min(len(a), len(c))]
        )

    def test_dataset_bit_identical_under_seed(self):
        spec = SyntheticTaskSpec(num_samples=6, seed=9)
        fa, la = synth_temporal_order(spec)
        fb, lb = synth_temporal_order(spec)
        assert np.array_equal(fa, fb) and np.array_equal(la, lb)

    def test_labels_exactly_balanced(self):
        _, labels = synth_temporal_order(SyntheticTaskSpec(num_samples=30, seed=0))
        counts = np.bincount(labels)
        assert counts.tolist() == [15, 15]

    def test_order_is_the_label(self, small_synth):
        frames, labels = small_synth
        half = frames.shape[1] // 2
        left = frames[:, :half, :, :, : frames.shape[-1] // 2].sum(axis=(1, 2, 3, 4))
        right = frames[:, :half, :, :, frames.shape[-1] // 2 :].sum(axis=(1, 2, 3, 4))
        # class 0 shows the left pattern first, class 1 the right pattern
        assert np.all((left > right) == (labels == 0))

    def test_class_conditional_time_sums_match(self):
        # pattern budgets are equal, so time-summed totals differ only by noise
        spec = SyntheticTaskSpec(num_samples=1000, seed=1)
        frames, labels = synth_temporal_order(spec)
        totals = frames.sum(axis=(1, 2, 3, 4))
        t0, t1 = totals[labels == 0], totals[labels == 1]
        pooled_sigma = np.sqrt(t0.var() / len(t0) + t1.var() / len(t1))
        assert abs(t0.mean() - t1.mean()) <= 3 * pooled_sigma


class TestBlindOracle:
    def test_scores_near_chance(self):
        spec = SyntheticTaskSpec(num_samples=1000, seed=0)
        frames, labels = synth_temporal_order(spec)
        acc = order_blind_accuracy(frames[:800], labels[:800], frames[800:], labels[800:])
        assert acc <= 0.55
