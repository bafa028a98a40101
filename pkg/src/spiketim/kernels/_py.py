"""Pure-numpy implementations of the convolution and pooling kernels.

These are the reference backend; the optional compiled extension in
``_core.pyx`` must match them numerically (up to float reduction order).
All functions take and return plain ndarrays.
"""

import numpy as np


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return cols.reshape(n, c * kh * kw, oh * ow, order="C"), oh, ow


def conv2d_forward(x, w, stride, pad):
    """Cross-correlation: x (N,C,H,W), w (O,C,kh,kw) -> (N,O,OH,OW)."""
    n = x.shape[0]
    o, _, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    y = w.reshape(o, -1) @ cols
    return y.reshape(n, o, oh, ow)


def conv2d_backward(x, w, gy, stride, pad):
    """Gradients of conv2d_forward w.r.t. x and w."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    _, _, oh, ow = gy.shape
    cols, _, _ = _im2col(x, kh, kw, stride, pad)
    gflat = gy.reshape(n, o, oh * ow)
    gw = np.einsum("nop,nkp->ok", gflat, cols).reshape(w.shape)

    # col2im: scatter w^T @ gy back onto the padded input grid.
    gcols = np.einsum("ok,nop->nkp", w.reshape(o, -1), gflat)
    gcols = gcols.reshape(n, c, kh, kw, oh, ow)
    gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += gcols[
                :, :, i, j
            ]
    if pad:
        gxp = gxp[:, :, pad : pad + h, pad : pad + wd]
    return gxp, gw


def maxpool2x2_forward(x):
    """2x2/stride-2 max pooling; also returns flat argmax indices for backward."""
    n, c, h, w = x.shape
    xr = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    xr = xr.reshape(n, c, h // 2, w // 2, 4)
    idx = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, idx.astype(np.int8)


def maxpool2x2_backward(gy, idx, shape):
    n, c, h, w = shape
    gxr = np.zeros((n, c, h // 2, w // 2, 4), dtype=gy.dtype)
    np.put_along_axis(gxr, idx[..., None].astype(np.int64), gy[..., None], axis=-1)
    gxr = gxr.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return gxr.reshape(n, c, h, w)
