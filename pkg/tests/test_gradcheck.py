"""The finite-difference suite itself: green by default, red under fault injection."""

import numpy as np
import pytest

from spiketim.gradcheck import (
    GROUPS,
    TOL_E2E,
    TOL_OPS,
    check_surrogate_conformance,
    corrupted_backward,
    run_suite,
    suite_passed,
)
from spiketim.errors import ConfigurationError


@pytest.fixture(scope="module")
def results():
    return run_suite(seed=0)


def test_all_groups_present(results):
    assert set(results) == set(GROUPS)


def test_tensor_ops_within_tolerance(results):
    err, _, tol = results["tensor_ops"]
    assert tol == TOL_OPS
    assert err <= tol


def test_lif_surrogate_within_tolerance(results):
    err, _, tol = results["lif_surrogate"]
    assert err <= tol


def test_tim_recurrence_within_tolerance(results):
    err, _, tol = results["tim_recurrence"]
    assert tol == TOL_E2E
    assert err <= tol


def test_end_to_end_within_tolerance(results):
    err, _, tol = results["end_to_end"]
    assert err <= tol


def test_suite_passes(results):
    assert suite_passed(results)


def test_spike_backward_matches_surrogate_exactly():
    assert check_surrogate_conformance(seed=0) == 0.0


def test_corrupted_conv_backward_detected():
    bad = run_suite(seed=0, corrupt="conv2d")
    assert not suite_passed(bad)
    err, name, tol = bad["tensor_ops"]
    assert err > tol
    assert "conv2d" in name


def test_corruption_is_scoped_to_the_context():
    from spiketim import kernels

    orig = kernels.conv2d_backward
    with corrupted_backward("conv2d"):
        assert kernels.conv2d_backward is not orig
    assert kernels.conv2d_backward is orig


def test_unknown_corruption_target_rejected():
    with pytest.raises(ConfigurationError):
        with corrupted_backward("softmax"):
            pass


def test_suite_runs_in_64_bit():
    # spot check: the op-level tensors the suite builds are float64
    from spiketim.gradcheck import check_tensor_ops

    err, _ = check_tensor_ops(seed=1)
    assert err <= TOL_OPS
