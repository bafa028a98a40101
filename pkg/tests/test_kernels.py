"""Compiled kernel backend vs the pure-python fallback."""

import numpy as np
import pytest

from spiketim import kernels
from spiketim.kernels import _py

_core = pytest.importorskip("spiketim.kernels._core")


CASES = [
    ((1, 1, 4, 4), (1, 1, 3, 3), 1, 1),
    ((2, 3, 8, 8), (4, 3, 3, 3), 1, 1),
    ((2, 3, 9, 9), (4, 3, 3, 3), 2, 1),
    ((1, 2, 6, 6), (2, 2, 1, 1), 1, 0),
    ((3, 4, 5, 7), (2, 4, 3, 3), 1, 1),
]


@pytest.mark.parametrize("xs,ws,stride,pad", CASES)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv2d_backends_agree(xs, ws, stride, pad, dtype):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(xs).astype(dtype)
    w = rng.standard_normal(ws).astype(dtype)
    y_py = _py.conv2d_forward(x, w, stride, pad)
    y_c = _core.conv2d_forward(x, w, stride, pad)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(y_c, y_py, atol=tol, rtol=tol)

    gy = rng.standard_normal(y_py.shape).astype(dtype)
    gx_py, gw_py = _py.conv2d_backward(x, w, gy, stride, pad)
    gx_c, gw_c = _core.conv2d_backward(x, w, gy, stride, pad)
    np.testing.assert_allclose(gx_c, gx_py, atol=tol, rtol=tol)
    np.testing.assert_allclose(gw_c, gw_py, atol=10 * tol, rtol=10 * tol)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_maxpool_backends_agree(dtype):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 4, 6, 8)).astype(dtype)
    y_py, idx_py = _py.maxpool2x2_forward(x)
    y_c, idx_c = _core.maxpool2x2_forward(x)
    np.testing.assert_array_equal(y_c, y_py)
    np.testing.assert_array_equal(idx_c, idx_py)

    gy = rng.standard_normal(y_py.shape).astype(dtype)
    np.testing.assert_array_equal(
        _core.maxpool2x2_backward(gy, idx_c, x.shape),
        _py.maxpool2x2_backward(gy, idx_py, x.shape),
    )


def test_maxpool_tie_breaks_match(dtype=np.float32):
    # equal values in a window must pick the same slot in both backends
    x = np.ones((1, 1, 4, 4), dtype=dtype)
    _, idx_py = _py.maxpool2x2_forward(x)
    _, idx_c = _core.maxpool2x2_forward(x)
    np.testing.assert_array_equal(idx_c, idx_py)


def test_readonly_inputs_accepted():
    x = np.broadcast_to(np.float32(1.0), (1, 1, 4, 4))
    out = kernels.maxpool2x2_forward(x)[0]
    np.testing.assert_array_equal(out, np.ones((1, 1, 2, 2), dtype=np.float32))


def test_backend_reports_compiled_when_available():
    assert kernels.backend == "cython"
