"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run: every op that touches a grad-requiring tensor records its
parents and a backward closure on the output. ``Tensor.backward()`` walks
the recorded graph once, in reverse topological order, and accumulates
gradients into the leaves. Values are float32 by default; gradient-check
code paths build float64 tensors and every op preserves dtype.
"""

import struct
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, FormatError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, optimizer updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    # -- autodiff ------------------------------------------------------
    def backward(self):
        if self.size != 1:
            raise ContractError(f"backward() requires a scalar, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for p, pg in zip(node._prev, node._backward(g)):
                    if pg is None:
                        continue
                    acc = grads.get(id(p))
                    grads[id(p)] = pg if acc is None else acc + pg
            elif node.requires_grad:
                pg = np.array(g, dtype=node.dtype)
                node.grad = pg if node.grad is None else node.grad + pg

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._prev for p in parents):
        out.requires_grad = False
        out._prev = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -------------------------------------------------------

def _coerce_pair(a, b):
    if isinstance(a, Tensor):
        return a, _as_tensor(b, like=a)
    return _as_tensor(a, like=b), b


def add(a, b):
    a, b = _coerce_pair(a, b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), backward)


def sub(a, b):
    a, b = _coerce_pair(a, b)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(data, (a, b), backward)


def mul(a, b):
    a, b = _coerce_pair(a, b)
    data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), backward)


def exp(a):
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _make(data, (a,), backward)


def log(a):
    data = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _make(data, (a,), backward)


# -- reductions / views ------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(data), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    n = a.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / n,)

    return _make(np.asarray(data), (a,), backward)


def reshape(a, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), backward)


def transpose(a, axes=None):
    data = a.data.transpose(axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return _make(data, (a,), backward)


# -- linear algebra ----------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), backward)


def linear(x, w, b=None):
    """x @ w + b, with w (in, out) and b (out,)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# -- convolutions ------------------------------------------------------

def conv1d_depthwise(x, kernel):
    """Per-channel 1-D correlation with 'same' zero padding.

    x is (..., C, L); kernel is (C, k) with odd k. No cross-channel mixing.
    """
    k = kernel.shape[-1]
    if k % 2 == 0:
        raise DimensionError(f"depthwise conv kernel length must be odd, got {k}")
    if x.shape[-2] != kernel.shape[0]:
        raise DimensionError(
            f"channel mismatch: input {x.shape} vs kernel {kernel.shape}"
        )
    pad = k // 2
    length = x.shape[-1]
    xp = np.pad(x.data, [(0, 0)] * (x.ndim - 1) + [(pad, pad)])
    data = np.zeros_like(x.data)
    for j in range(k):
        data += xp[..., j : j + length] * kernel.data[:, j, None]

    def backward(g):
        gp = np.pad(g, [(0, 0)] * (x.ndim - 1) + [(pad, pad)])
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(kernel.data)
        for j in range(k):
            # out[.., c, i] depends on x[.., c, i + j - pad]
            gx += gp[..., k - 1 - j : k - 1 - j + length] * kernel.data[:, j, None]
            red = tuple(range(x.ndim - 2))
            gk[:, j] = (g * xp[..., j : j + length]).sum(axis=red + (x.ndim - 1,))
        return gx, gk

    return _make(data, (x, kernel), backward)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Batched 2-D cross-correlation; x (N,C,H,W), w (O,C,kh,kw)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d shapes incompatible: {x.shape} with kernel {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if (h + 2 * padding - kh) % stride or (wd + 2 * padding - kw) % stride:
        raise DimensionError(
            f"conv2d output extent not integral for input {x.shape}, "
            f"kernel {w.shape}, stride {stride}, padding {padding}"
        )
    data = kernels.conv2d_forward(x.data, w.data, stride, padding)
    if b is not None:
        data = data + b.data[:, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g = np.ascontiguousarray(g)
        gx, gw = kernels.conv2d_backward(x.data, w.data, g, stride, padding)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(data, parents, backward)


def maxpool2x2(x):
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise DimensionError(f"maxpool2x2 needs even spatial extents, got {x.shape}")
    data, idx = kernels.maxpool2x2_forward(x.data)

    def backward(g):
        return (kernels.maxpool2x2_backward(np.ascontiguousarray(g), idx, x.shape),)

    return _make(data, (x,), backward)


# -- normalization -----------------------------------------------------

def batchnorm(x, gamma, beta, mean, var, axis, training, eps=1e-5):
    """Normalize over every axis except `axis` (the channel axis).

    In training mode `mean`/`var` must be the batch statistics of x (plain
    arrays) and the backward differentiates through them; in eval mode they
    are treated as constants (running statistics).
    """
    red = tuple(i for i in range(x.ndim) if i != axis)
    shape = [1] * x.ndim
    shape[axis] = x.shape[axis]
    mean_b = mean.reshape(shape)
    inv_std = 1.0 / np.sqrt(var + eps)
    inv_b = inv_std.reshape(shape)
    xhat = (x.data - mean_b) * inv_b
    data = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gxhat = g * gamma.data.reshape(shape)
        if training:
            gx = (
                gxhat
                - gxhat.mean(axis=red, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=red, keepdims=True)
            ) * inv_b
        else:
            gx = gxhat * inv_b
        return gx.astype(x.dtype, copy=False), ggamma, gbeta

    return _make(data, (x, gamma, beta), backward)


# -- custom-gradient hook ----------------------------------------------

def custom_grad(forward_fn, backward_fn):
    """Build an op whose backward bypasses autodiff of its forward.

    forward_fn(*arrays) -> (out_array, saved); backward_fn(saved, g) -> tuple
    of per-input gradient arrays (or None). Gradient shapes are validated
    against the inputs.
    """

    def op(*inputs):
        inputs = tuple(_as_tensor(t) for t in inputs)
        data, saved = forward_fn(*(t.data for t in inputs))

        def backward(g):
            grads = backward_fn(saved, g)
            if len(grads) != len(inputs):
                raise ContractError(
                    f"custom_grad backward returned {len(grads)} gradients "
                    f"for {len(inputs)} inputs"
                )
            for t, gr in zip(inputs, grads):
                if gr is not None and gr.shape != t.shape:
                    raise ContractError(
                        f"custom_grad gradient shape {gr.shape} does not match "
                        f"input shape {t.shape}"
                    )
            return grads

        return _make(data, inputs, backward)

    return op


# -- losses ------------------------------------------------------------

def cross_entropy(logits, labels):
    """Mean cross-entropy over the batch; logits (B, C), labels int (B,)."""
    labels = np.asarray(labels)
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(sez)
    n = z.shape[0]
    data = -logp[np.arange(n), labels].mean()

    def backward(g):
        p = ez / sez
        p[np.arange(n), labels] -= 1.0
        return ((g * p / n).astype(logits.dtype, copy=False),)

    return _make(np.asarray(data, dtype=z.dtype), (logits,), backward)


# -- serialization -----------------------------------------------------

_PRECISION_TAGS = {np.dtype(np.float32): 4, np.dtype(np.float64): 8}
_TAG_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def tensor_to_bytes(t):
    """Length-prefixed little-endian layout: rank, extents, precision tag, values."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    tag = _PRECISION_TAGS[arr.dtype]
    out = struct.pack("<I", arr.ndim)
    out += b"".join(struct.pack("<Q", e) for e in arr.shape)
    out += struct.pack("<B", tag)
    out += np.ascontiguousarray(arr, dtype=_TAG_DTYPES[tag]).tobytes()
    return out


def tensor_from_bytes(buf, offset=0):
    """Parse one serialized tensor; returns (ndarray, next_offset)."""
    try:
        (rank,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        if rank > 32:
            raise FormatError(f"implausible tensor rank {rank}", offset - 4)
        shape = struct.unpack_from(f"<{rank}Q", buf, offset)
        offset += 8 * rank
        (tag,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        if tag not in _TAG_DTYPES:
            raise FormatError(f"unknown precision tag {tag}", offset - 1)
        dtype = _TAG_DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(buf):
            raise FormatError("truncated tensor payload", offset)
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape)
        return arr.copy(), offset + nbytes
    except struct.error as e:
        raise FormatError(f"truncated tensor header: {e}", offset) from None
