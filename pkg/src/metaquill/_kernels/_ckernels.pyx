# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels.

Must stay bit-identical to np_backend: same column layout, same float64
accumulation order in col2im, first-maximum tie rule in maxpool2x2.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


def im2col(cnp.float32_t[:, :, ::1] xp, int kh, int kw, int sh, int sw):
    cdef int c = xp.shape[0]
    cdef int h = xp.shape[1]
    cdef int w = xp.shape[2]
    cdef int oh = (h - kh) // sh + 1
    cdef int ow = (w - kw) // sw + 1
    out_arr = np.empty((c * kh * kw, oh * ow), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef int ci, p, q, y, x, row
    with nogil:
        for ci in range(c):
            for p in range(kh):
                for q in range(kw):
                    row = (ci * kh + p) * kw + q
                    for y in range(oh):
                        for x in range(ow):
                            out[row, y * ow + x] = xp[ci, y * sh + p, x * sw + q]
    return out_arr


def col2im(cnp.float32_t[:, ::1] cols, int c, int h, int w, int kh, int kw, int sh, int sw):
    cdef int oh = (h - kh) // sh + 1
    cdef int ow = (w - kw) // sw + 1
    acc_arr = np.zeros((c, h, w), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] acc = acc_arr
    cdef int ci, p, q, y, x, row
    with nogil:
        # (p,q) outer accumulation order matches the numpy backend exactly
        for p in range(kh):
            for q in range(kw):
                for ci in range(c):
                    row = (ci * kh + p) * kw + q
                    for y in range(oh):
                        for x in range(ow):
                            acc[ci, y * sh + p, x * sw + q] += <double> cols[row, y * ow + x]
    return acc_arr.astype(np.float32)


def maxpool2x2(cnp.float32_t[:, :, ::1] x):
    cdef int c = x.shape[0]
    cdef int h = x.shape[1]
    cdef int w = x.shape[2]
    cdef int h2 = h // 2
    cdef int w2 = w // 2
    out_arr = np.empty((c, h2, w2), dtype=np.float32)
    idx_arr = np.empty((c, h2, w2), dtype=np.int64)
    cdef cnp.float32_t[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef int ci, y, x2, a, b, ry, cx
    cdef float best, v
    cdef int by, bx
    with nogil:
        for ci in range(c):
            for y in range(h2):
                for x2 in range(w2):
                    best = x[ci, 2 * y, 2 * x2]
                    by = 2 * y
                    bx = 2 * x2
                    for a in range(2):
                        for b in range(2):
                            ry = 2 * y + a
                            cx = 2 * x2 + b
                            v = x[ci, ry, cx]
                            if v > best:
                                best = v
                                by = ry
                                bx = cx
                    out[ci, y, x2] = best
                    idx[ci, y, x2] = (<cnp.int64_t> ci * h + by) * w + bx
    return out_arr, idx_arr


def pool_gather(x, idx):
    flat = np.ascontiguousarray(x, dtype=np.float32).reshape(-1)
    return _gather_flat(flat, np.ascontiguousarray(idx, dtype=np.int64))


def _gather_flat(cnp.float32_t[::1] flat, idx):
    cdef cnp.int64_t[::1] iv = idx.reshape(-1)
    cdef Py_ssize_t n = iv.shape[0]
    out_arr = np.empty(n, dtype=np.float32)
    cdef cnp.float32_t[::1] out = out_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = flat[iv[i]]
    return out_arr.reshape(idx.shape)


def pool_scatter(g, idx, shape):
    cdef cnp.float32_t[::1] gv = np.ascontiguousarray(g, dtype=np.float32).reshape(-1)
    cdef cnp.int64_t[::1] iv = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1)
    out_arr = np.zeros(shape, dtype=np.float32)
    cdef cnp.float32_t[::1] out = out_arr.reshape(-1)
    cdef Py_ssize_t i
    cdef Py_ssize_t n = iv.shape[0]
    with nogil:
        for i in range(n):
            out[iv[i]] = gv[i]
    return out_arr
