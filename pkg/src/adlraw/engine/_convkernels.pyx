# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled direct-convolution kernels (float32/float64).

Same contract as the numpy fallback: inputs arrive pre-padded. All three
kernels block over 4 output channels so each loaded input value feeds four
multiply-accumulates, and the stride-1 inner loops are unit-stride so the
compiler can vectorize them.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


@cython.boundscheck(False)
@cython.wraparound(False)
def _forward(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w, int stride,
             floating[:, :, :, ::1] y):
    cdef Py_ssize_t n = xp.shape[0], ci = xp.shape[1]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t cob = co - co % 4
    cdef Py_ssize_t b, o, i, a, c, r, q
    cdef floating w0, w1, w2, w3, xv
    cdef floating *y0
    cdef floating *y1
    cdef floating *y2
    cdef floating *y3
    cdef const floating *xrow
    with nogil:
        for b in range(n):
            for o in range(0, cob, 4):
                for r in range(oh):
                    y0 = &y[b, o, r, 0]
                    y1 = &y[b, o + 1, r, 0]
                    y2 = &y[b, o + 2, r, 0]
                    y3 = &y[b, o + 3, r, 0]
                    for i in range(ci):
                        for a in range(kh):
                            xrow = &xp[b, i, r * stride + a, 0]
                            for c in range(kw):
                                w0 = w[o, i, a, c]
                                w1 = w[o + 1, i, a, c]
                                w2 = w[o + 2, i, a, c]
                                w3 = w[o + 3, i, a, c]
                                if stride == 1:
                                    for q in range(ow):
                                        xv = xrow[q + c]
                                        y0[q] += w0 * xv
                                        y1[q] += w1 * xv
                                        y2[q] += w2 * xv
                                        y3[q] += w3 * xv
                                else:
                                    for q in range(ow):
                                        xv = xrow[q * stride + c]
                                        y0[q] += w0 * xv
                                        y1[q] += w1 * xv
                                        y2[q] += w2 * xv
                                        y3[q] += w3 * xv
            for o in range(cob, co):
                for r in range(oh):
                    y0 = &y[b, o, r, 0]
                    for i in range(ci):
                        for a in range(kh):
                            xrow = &xp[b, i, r * stride + a, 0]
                            for c in range(kw):
                                w0 = w[o, i, a, c]
                                for q in range(ow):
                                    y0[q] += w0 * xrow[q * stride + c]


@cython.boundscheck(False)
@cython.wraparound(False)
def _backward_input(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] w, int stride,
                    floating[:, :, :, ::1] gxp):
    cdef Py_ssize_t n = gy.shape[0], co = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t ci = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t cob = co - co % 4
    cdef Py_ssize_t b, o, i, a, c, r, q
    cdef floating w0, w1, w2, w3
    cdef floating *grow
    cdef const floating *g0
    cdef const floating *g1
    cdef const floating *g2
    cdef const floating *g3
    with nogil:
        for b in range(n):
            for i in range(ci):
                for o in range(0, cob, 4):
                    for a in range(kh):
                        for c in range(kw):
                            w0 = w[o, i, a, c]
                            w1 = w[o + 1, i, a, c]
                            w2 = w[o + 2, i, a, c]
                            w3 = w[o + 3, i, a, c]
                            for r in range(oh):
                                grow = &gxp[b, i, r * stride + a, 0]
                                g0 = &gy[b, o, r, 0]
                                g1 = &gy[b, o + 1, r, 0]
                                g2 = &gy[b, o + 2, r, 0]
                                g3 = &gy[b, o + 3, r, 0]
                                if stride == 1:
                                    for q in range(ow):
                                        grow[q + c] += w0 * g0[q] + w1 * g1[q] + w2 * g2[q] + w3 * g3[q]
                                else:
                                    for q in range(ow):
                                        grow[q * stride + c] += w0 * g0[q] + w1 * g1[q] + w2 * g2[q] + w3 * g3[q]
                for o in range(cob, co):
                    for a in range(kh):
                        for c in range(kw):
                            w0 = w[o, i, a, c]
                            for r in range(oh):
                                grow = &gxp[b, i, r * stride + a, 0]
                                g0 = &gy[b, o, r, 0]
                                for q in range(ow):
                                    grow[q * stride + c] += w0 * g0[q]


@cython.boundscheck(False)
@cython.wraparound(False)
def _backward_weight(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] xp, int stride,
                     floating[:, :, :, ::1] gw):
    cdef Py_ssize_t n = gy.shape[0], co = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t ci = xp.shape[1], kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t cob = co - co % 4
    cdef Py_ssize_t b, o, i, a, c, r, q
    cdef floating a0, a1, a2, a3, xv
    cdef const floating *xrow
    cdef const floating *g0
    cdef const floating *g1
    cdef const floating *g2
    cdef const floating *g3
    with nogil:
        for b in range(n):
            for o in range(0, cob, 4):
                for i in range(ci):
                    for a in range(kh):
                        for c in range(kw):
                            a0 = 0
                            a1 = 0
                            a2 = 0
                            a3 = 0
                            for r in range(oh):
                                xrow = &xp[b, i, r * stride + a, 0]
                                g0 = &gy[b, o, r, 0]
                                g1 = &gy[b, o + 1, r, 0]
                                g2 = &gy[b, o + 2, r, 0]
                                g3 = &gy[b, o + 3, r, 0]
                                if stride == 1:
                                    for q in range(ow):
                                        xv = xrow[q + c]
                                        a0 += g0[q] * xv
                                        a1 += g1[q] * xv
                                        a2 += g2[q] * xv
                                        a3 += g3[q] * xv
                                else:
                                    for q in range(ow):
                                        xv = xrow[q * stride + c]
                                        a0 += g0[q] * xv
                                        a1 += g1[q] * xv
                                        a2 += g2[q] * xv
                                        a3 += g3[q] * xv
                            gw[o, i, a, c] += a0
                            gw[o + 1, i, a, c] += a1
                            gw[o + 2, i, a, c] += a2
                            gw[o + 3, i, a, c] += a3
            for o in range(cob, co):
                for i in range(ci):
                    for a in range(kh):
                        for c in range(kw):
                            a0 = 0
                            for r in range(oh):
                                xrow = &xp[b, i, r * stride + a, 0]
                                g0 = &gy[b, o, r, 0]
                                for q in range(ow):
                                    a0 += g0[q] * xrow[q * stride + c]
                            gw[o, i, a, c] += a0


def conv_forward(xp, w, stride):
    n, _, hp, wp = xp.shape
    o, _, kh, kw = w.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    y = np.zeros((n, o, oh, ow), dtype=xp.dtype)
    _forward(xp, w, stride, y)
    return y


def conv_backward_input(gy, w, stride, hp, wp):
    n = gy.shape[0]
    i = w.shape[1]
    gxp = np.zeros((n, i, hp, wp), dtype=gy.dtype)
    _backward_input(gy, w, stride, gxp)
    return gxp


def conv_backward_weight(gy, xp, kh, kw, stride):
    o = gy.shape[1]
    i = xp.shape[1]
    gw = np.zeros((o, i, kh, kw), dtype=gy.dtype)
    _backward_weight(gy, xp, stride, gw)
    return gw
