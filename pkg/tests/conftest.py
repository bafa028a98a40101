"""Shared fixtures: micro model configs and a tiny synthetic dataset."""

import json

import numpy as np
import pytest

from spiketim.attention import TIMConfig
from spiketim.model import ModelConfig
from spiketim.synth import SyntheticTaskSpec, synth_temporal_order


def micro_config(**overrides):
    """A model small enough for per-test forwards (8x8 input, dim 16)."""
    base = dict(
        num_steps=3,
        height=8,
        width=8,
        in_channels=2,
        sps_stages=2,
        embed_dim=16,
        num_heads=2,
        depth=1,
        mlp_ratio=2.0,
        num_classes=2,
        tim=TIMConfig(alpha=0.5, mode="tim"),
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_synth():
    """40 samples of the temporal-order task (T=10, 8x8), shared per session."""
    spec = SyntheticTaskSpec(num_samples=40, num_steps=10, grid=8, seed=0)
    return synth_temporal_order(spec)


@pytest.fixture
def run_config_file(tmp_path):
    """Write a micro run config JSON and return its path."""

    def make(**sections):
        cfg = {
            "model": {"num_steps": 4},
            "training": {"epochs": 2, "seed": 0},
            "data": {"synthetic": {"num_samples": 24, "noise_rate": 0.5}},
            "output_dir": str(tmp_path / "out"),
        }
        for key, val in sections.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(val)
            else:
                cfg[key] = val
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        return path

    return make


def assert_allclose(a, b, tol=0.0):
    np.testing.assert_allclose(np.asarray(a), np.asarray(b), rtol=0, atol=tol)
