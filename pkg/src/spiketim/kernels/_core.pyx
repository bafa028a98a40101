# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution and pooling kernels (direct loops, no im2col).

Numerically equivalent to kernels._py up to float summation order.
"""

import numpy as np

ctypedef fused real:
    float
    double


def _as_buffer(a):
    # typed memoryviews need contiguous, writable storage (broadcast views
    # coming out of reduction backwards are read-only)
    a = np.ascontiguousarray(a)
    return a if a.flags.writeable else a.copy()


def conv2d_forward(x, w, int stride, int pad):
    x = _as_buffer(x)
    w = _as_buffer(w)
    if x.dtype == np.float32:
        return _conv2d_forward[float](x, w, stride, pad)
    return _conv2d_forward[double](x, w, stride, pad)


def conv2d_backward(x, w, gy, int stride, int pad):
    x = _as_buffer(x)
    w = _as_buffer(w)
    gy = _as_buffer(gy)
    if x.dtype == np.float32:
        return _conv2d_backward[float](x, w, gy, stride, pad)
    return _conv2d_backward[double](x, w, gy, stride, pad)


def maxpool2x2_forward(x):
    x = _as_buffer(x)
    if x.dtype == np.float32:
        return _maxpool_forward[float](x)
    return _maxpool_forward[double](x)


def maxpool2x2_backward(gy, idx, shape):
    gy = _as_buffer(gy)
    idx = _as_buffer(idx)
    if gy.dtype == np.float32:
        return _maxpool_backward[float](gy, idx, shape)
    return _maxpool_backward[double](gy, idx, shape)


cdef inline Py_ssize_t _imax(Py_ssize_t a, Py_ssize_t b) noexcept:
    return a if a > b else b


cdef inline Py_ssize_t _ceil_div(Py_ssize_t a, Py_ssize_t b) noexcept:
    return (a + b - 1) // b


cdef _conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - kw) // stride + 1
    y_np = np.zeros((n, o, oh, ow), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] y = y_np
    cdef Py_ssize_t b, oc, ic, i, j, ki, kj, ih, ofs, jlo, jhi, ilo, ihi
    cdef real wv
    # accumulate shifted input rows so the j loop is contiguous and vectorizable
    for b in range(n):
        for oc in range(o):
            for ic in range(c):
                for ki in range(kh):
                    ilo = _imax(0, _ceil_div(pad - ki, stride))
                    ihi = oh
                    while ihi > ilo and (ihi - 1) * stride + ki - pad >= h:
                        ihi -= 1
                    for kj in range(kw):
                        wv = w[oc, ic, ki, kj]
                        ofs = kj - pad
                        jlo = _imax(0, _ceil_div(-ofs, stride))
                        jhi = ow
                        while jhi > jlo and (jhi - 1) * stride + ofs >= wd:
                            jhi -= 1
                        for i in range(ilo, ihi):
                            ih = i * stride + ki - pad
                            for j in range(jlo, jhi):
                                y[b, oc, i, j] += wv * x[b, ic, ih, j * stride + ofs]
    return y_np


cdef _conv2d_backward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                      real[:, :, :, ::1] gy, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    dtype = np.asarray(x).dtype
    gx_np = np.zeros((n, c, h, wd), dtype=dtype)
    gw_np = np.zeros((o, c, kh, kw), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_np
    cdef real[:, :, :, ::1] gw = gw_np
    cdef Py_ssize_t b, oc, ic, i, j, ki, kj, ih, ofs, jlo, jhi, ilo, ihi
    cdef real wv, gwacc
    for b in range(n):
        for oc in range(o):
            for ic in range(c):
                for ki in range(kh):
                    ilo = _imax(0, _ceil_div(pad - ki, stride))
                    ihi = oh
                    while ihi > ilo and (ihi - 1) * stride + ki - pad >= h:
                        ihi -= 1
                    for kj in range(kw):
                        wv = w[oc, ic, ki, kj]
                        ofs = kj - pad
                        jlo = _imax(0, _ceil_div(-ofs, stride))
                        jhi = ow
                        while jhi > jlo and (jhi - 1) * stride + ofs >= wd:
                            jhi -= 1
                        gwacc = 0
                        for i in range(ilo, ihi):
                            ih = i * stride + ki - pad
                            for j in range(jlo, jhi):
                                gx[b, ic, ih, j * stride + ofs] += wv * gy[b, oc, i, j]
                                gwacc += gy[b, oc, i, j] * x[b, ic, ih, j * stride + ofs]
                        gw[oc, ic, ki, kj] += gwacc
    return gx_np, gw_np


cdef _maxpool_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    y_np = np.empty((n, c, oh, ow), dtype=np.asarray(x).dtype)
    idx_np = np.empty((n, c, oh, ow), dtype=np.int8)
    cdef real[:, :, :, ::1] y = y_np
    cdef signed char[:, :, :, ::1] idx = idx_np
    cdef Py_ssize_t b, ch, i, j, k
    cdef real best, v
    cdef signed char bk
    for b in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    best = x[b, ch, 2 * i, 2 * j]
                    bk = 0
                    for k in range(1, 4):
                        v = x[b, ch, 2 * i + k // 2, 2 * j + k % 2]
                        if v > best:
                            best = v
                            bk = <signed char> k
                    y[b, ch, i, j] = best
                    idx[b, ch, i, j] = bk
    return y_np, idx_np


cdef _maxpool_backward(real[:, :, :, ::1] gy, signed char[:, :, :, ::1] idx, shape):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    gx_np = np.zeros((n, c, h, w), dtype=np.asarray(gy).dtype)
    cdef real[:, :, :, ::1] gx = gx_np
    cdef Py_ssize_t b, ch, i, j
    cdef signed char k
    for b in range(n):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    k = idx[b, ch, i, j]
                    gx[b, ch, 2 * i + k // 2, 2 * j + k % 2] = gy[b, ch, i, j]
    return gx_np
