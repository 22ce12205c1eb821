# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled correlation kernels. Same contracts as coffar.kernels.pure;
the accumulation order over (channel, row, col) matches the numpy
backend so results agree to rounding noise."""

import numpy as np


def corr2d_fwd(double[:, :, :, ::1] x, double[:, :, :, ::1] w):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t pt = (kh - 1) // 2, pl = (kw - 1) // 2
    out_arr = np.zeros((n, co, h, wd))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, i, u, v, r, c, rr, cc
    cdef double acc
    for b in range(n):
        for o in range(co):
            for r in range(h):
                for c in range(wd):
                    acc = 0.0
                    for i in range(ci):
                        for u in range(kh):
                            rr = r + u - pt
                            if rr < 0 or rr >= h:
                                continue
                            for v in range(kw):
                                cc = c + v - pl
                                if 0 <= cc < wd:
                                    acc = acc + w[o, i, u, v] * x[b, i, rr, cc]
                    out[b, o, r, c] = acc
    return out_arr


def corr2d_grad_kernel(double[:, :, :, ::1] x, double[:, :, :, ::1] gy,
                       Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = gy.shape[1]
    cdef Py_ssize_t pt = (kh - 1) // 2, pl = (kw - 1) // 2
    dw_arr = np.empty((co, ci, kh, kw))
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t b, o, i, u, v, p, q, rr, cc
    cdef double acc
    for o in range(co):
        for i in range(ci):
            for u in range(kh):
                for v in range(kw):
                    acc = 0.0
                    for b in range(n):
                        for p in range(h):
                            rr = p + u - pt
                            if rr < 0 or rr >= h:
                                continue
                            for q in range(wd):
                                cc = q + v - pl
                                if 0 <= cc < wd:
                                    acc = acc + gy[b, o, p, q] * x[b, i, rr, cc]
                    dw[o, i, u, v] = acc
    return dw_arr
