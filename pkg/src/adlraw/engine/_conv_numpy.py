"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Fallback used when the compiled extension is unavailable. All three entry
points take the *padded* input; padding/cropping is handled by the caller.
Shapes: x (N, I, HP, WP), w (O, I, KH, KW), y/gy (N, O, OH, OW).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp, kh, kw, stride):
    # (N, I, OH, OW, KH, KW) view, no copy
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride, :, :]


def conv_forward(xp, w, stride):
    o, i, kh, kw = w.shape
    win = _windows(xp, kh, kw, stride)
    n, _, oh, ow = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, i * kh * kw)
    y = cols @ w.reshape(o, i * kh * kw).T
    return np.ascontiguousarray(y.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))


def conv_backward_weight(gy, xp, kh, kw, stride):
    win = _windows(xp, kh, kw, stride)
    # sum over batch and output positions
    gw = np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(gw)


def conv_backward_input(gy, w, stride, hp, wp):
    n, o, oh, ow = gy.shape
    _, i, kh, kw = w.shape
    # t[n, oh, ow, i, kh, kw]: per-position contribution to the input window
    t = np.tensordot(gy, w, axes=([1], [0]))
    gxp = np.zeros((n, i, hp, wp), dtype=gy.dtype)
    for a in range(kh):
        ha = a + stride * oh
        for b in range(kw):
            wb = b + stride * ow
            gxp[:, :, a:ha:stride, b:wb:stride] += t[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    return gxp
