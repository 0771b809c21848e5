"""Hot numeric kernels: 2-D convolution and 2x2 max-pooling.

Two interchangeable backends compute identical values (up to summation
order): numba-jitted loops (default) and a pure-numpy path. Set
``MODALMASK_DISABLE_NUMBA=1`` before import to force the numpy path;
``USE_NUMBA`` reports which one is active. ``benchmarks/bench_kernels.py``
compares the two.

Only stride-1 convolutions are provided; all spatial downsampling goes
through the pooling kernel. Pooling ties resolve to the first maximum in
row-major window order on both backends.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("MODALMASK_DISABLE_NUMBA", "0") != "1"

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:
        USE_NUMBA = False


def _np_pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _np_windows(x, kh, kw):
    # (B, C, KH, KW, Ho, Wo) sliding view, no copy
    b, c, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    sb, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (b, c, kh, kw, ho, wo), (sb, sc, sh, sw, sh, sw), writeable=False
    )


def conv2d_forward_numpy(x, w, pad):
    win = _np_windows(_np_pad(x, pad), w.shape[2], w.shape[3])
    return np.einsum("bcuvhw,ocuv->bohw", win, w, optimize=True)


def conv2d_backward_w_numpy(x, dy, pad, kh, kw):
    win = _np_windows(_np_pad(x, pad), kh, kw)
    return np.einsum("bcuvhw,bohw->ocuv", win, dy, optimize=True)


def conv2d_backward_x_numpy(dy, w, pad, h, wdt):
    kh, kw = w.shape[2], w.shape[3]
    win = _np_windows(_np_pad(dy, kh - 1 - pad), kh, kw)
    wr = w[:, :, ::-1, ::-1]
    dx = np.einsum("bouvhw,ocuv->bchw", win, wr, optimize=True)
    assert dx.shape[2] == h and dx.shape[3] == wdt
    return dx


def maxpool2_forward_numpy(x):
    b, c, h, w = x.shape
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(b, c, h // 2, w // 2, 4)
    arg = flat.argmax(axis=-1).astype(np.int64)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2_backward_numpy(dy, arg, h, w):
    b, c, ho, wo = dy.shape
    dwin = np.zeros((b, c, ho, wo, 4))
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    dx = dwin.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dx.reshape(b, c, h, w)


if USE_NUMBA:

    @njit(cache=True)
    def _conv2d_forward_nb(xp, w):
        b, c, hp, wp = xp.shape
        o, _, kh, kw = w.shape
        ho, wo = hp - kh + 1, wp - kw + 1
        out = np.zeros((b, o, ho, wo))
        for bi in range(b):
            for oi in range(o):
                for ci in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            wv = w[oi, ci, u, v]
                            for i in range(ho):
                                for j in range(wo):
                                    out[bi, oi, i, j] += wv * xp[bi, ci, i + u, j + v]
        return out

    @njit(cache=True)
    def _conv2d_backward_w_nb(xp, dy, kh, kw):
        b, c, hp, wp = xp.shape
        _, o, ho, wo = dy.shape
        dw = np.zeros((o, c, kh, kw))
        for bi in range(b):
            for oi in range(o):
                for ci in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            acc = 0.0
                            for i in range(ho):
                                for j in range(wo):
                                    acc += dy[bi, oi, i, j] * xp[bi, ci, i + u, j + v]
                            dw[oi, ci, u, v] += acc
        return dw

    @njit(cache=True)
    def _conv2d_backward_x_nb(dyp, w):
        b, o, hp, wp = dyp.shape
        _, c, kh, kw = w.shape
        h, wdt = hp - kh + 1, wp - kw + 1
        dx = np.zeros((b, c, h, wdt))
        for bi in range(b):
            for ci in range(c):
                for oi in range(o):
                    for u in range(kh):
                        for v in range(kw):
                            wv = w[oi, ci, kh - 1 - u, kw - 1 - v]
                            for i in range(h):
                                for j in range(wdt):
                                    dx[bi, ci, i, j] += wv * dyp[bi, oi, i + u, j + v]
        return dx

    @njit(cache=True)
    def _maxpool2_forward_nb(x):
        b, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        out = np.empty((b, c, ho, wo))
        arg = np.empty((b, c, ho, wo), dtype=np.int64)
        for bi in range(b):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = x[bi, ci, 2 * i, 2 * j]
                        ai = 0
                        k = 0
                        for di in range(2):
                            for dj in range(2):
                                v = x[bi, ci, 2 * i + di, 2 * j + dj]
                                if v > best:
                                    best = v
                                    ai = k
                                k += 1
                        out[bi, ci, i, j] = best
                        arg[bi, ci, i, j] = ai
        return out, arg

    @njit(cache=True)
    def _maxpool2_backward_nb(dy, arg, h, w):
        b, c, ho, wo = dy.shape
        dx = np.zeros((b, c, h, w))
        for bi in range(b):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        k = arg[bi, ci, i, j]
                        dx[bi, ci, 2 * i + k // 2, 2 * j + k % 2] += dy[bi, ci, i, j]
        return dx

    def conv2d_forward(x, w, pad):
        return _conv2d_forward_nb(_np_pad(x, pad), w)

    def conv2d_backward_w(x, dy, pad, kh, kw):
        return _conv2d_backward_w_nb(_np_pad(x, pad), dy, kh, kw)

    def conv2d_backward_x(dy, w, pad, h, wdt):
        kh = w.shape[2]
        return _conv2d_backward_x_nb(_np_pad(dy, kh - 1 - pad), w)

    def maxpool2_forward(x):
        return _maxpool2_forward_nb(x)

    def maxpool2_backward(dy, arg, h, w):
        return _maxpool2_backward_nb(dy, arg, h, w)

else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_backward_w = conv2d_backward_w_numpy
    conv2d_backward_x = conv2d_backward_x_numpy
    maxpool2_forward = maxpool2_forward_numpy
    maxpool2_backward = maxpool2_backward_numpy
