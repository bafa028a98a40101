"""Hot numeric kernels with a compiled core and a pure-python fallback.

The compiled extension (``_core``, Cython) is used when importable unless
``SPIKETIM_PURE_PYTHON`` is set in the environment. Both backends expose
the same four functions and match numerically up to float reduction
order; ``benchmarks/bench_kernels.py`` compares them. The conv forward
stays on the numpy backend either way: its im2col path runs on BLAS and
beats scalar compiled loops at every size measured, while the backward
scatter and the pooling kernels are where compilation pays.
"""

import os

from . import _py

backend = "python"
_grad_impl = _py

if not os.environ.get("SPIKETIM_PURE_PYTHON"):
    try:
        from . import _core

        backend = "cython"
        _grad_impl = _core
    except ImportError:
        pass


def conv2d_forward(x, w, stride, pad):
    return _py.conv2d_forward(x, w, stride, pad)


def conv2d_backward(x, w, gy, stride, pad):
    return _grad_impl.conv2d_backward(x, w, gy, stride, pad)


def maxpool2x2_forward(x):
    return _grad_impl.maxpool2x2_forward(x)


def maxpool2x2_backward(gy, idx, shape):
    return _grad_impl.maxpool2x2_backward(gy, idx, shape)
