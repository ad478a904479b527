# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot inner loops.

Operation-for-operation mirror of ``_fallback.py``; both backends must
produce bit-identical outputs (the build disables FP contraction).  Keep
the two files in sync.
"""

import numpy as np

from libc.math cimport floor


cdef double BICUBIC_A = -0.5


cdef inline Py_ssize_t _clampi(Py_ssize_t x, Py_ssize_t lo, Py_ssize_t hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def bilinear_gather(const double[:, ::1] src, const unsigned char[:, ::1] src_mask,
                    const double[::1] fr, const double[::1] fc):
    """Bilinear interpolation of src at fractional indices (fr, fc)."""
    cdef Py_ssize_t rows = src.shape[0]
    cdef Py_ssize_t cols = src.shape[1]
    cdef Py_ssize_t n = fr.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    miss_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] out = out_arr
    cdef unsigned char[::1] miss = miss_arr
    cdef Py_ssize_t i, r0i, r1i, c0i, c1i
    cdef double r0, c0, t, s, v00, v01, v10, v11, top, bot
    with nogil:
        for i in range(n):
            r0 = floor(fr[i])
            c0 = floor(fc[i])
            t = fr[i] - r0
            s = fc[i] - c0
            r0i = _clampi(<Py_ssize_t>r0, 0, rows - 1)
            r1i = _clampi(<Py_ssize_t>r0 + 1, 0, rows - 1)
            c0i = _clampi(<Py_ssize_t>c0, 0, cols - 1)
            c1i = _clampi(<Py_ssize_t>c0 + 1, 0, cols - 1)
            v00 = src[r0i, c0i]
            v01 = src[r0i, c1i]
            v10 = src[r1i, c0i]
            v11 = src[r1i, c1i]
            # Lerp form reproduces constant fields bit-exactly.
            top = v00 + s * (v01 - v00)
            bot = v10 + s * (v11 - v10)
            out[i] = top + t * (bot - top)
            if (src_mask[r0i, c0i] | src_mask[r0i, c1i]
                    | src_mask[r1i, c0i] | src_mask[r1i, c1i]):
                miss[i] = 1
    return out_arr, miss_arr.astype(bool)


cdef inline double _cubic_outer(double x) nogil:
    return BICUBIC_A * (((x - 5.0) * x + 8.0) * x - 4.0)


cdef inline double _cubic_inner(double x) nogil:
    return ((BICUBIC_A + 2.0) * x - (BICUBIC_A + 3.0)) * x * x + 1.0


def bicubic_gather(const double[:, ::1] src, const unsigned char[:, ::1] src_mask,
                   const double[::1] fr, const double[::1] fc):
    """Cubic-convolution interpolation (a = -0.5) at fractional indices."""
    cdef Py_ssize_t rows = src.shape[0]
    cdef Py_ssize_t cols = src.shape[1]
    cdef Py_ssize_t n = fr.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    miss_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] out = out_arr
    cdef unsigned char[::1] miss = miss_arr
    cdef Py_ssize_t i, j, k, rbase, cbase
    cdef Py_ssize_t ridx[4]
    cdef Py_ssize_t cidx[4]
    cdef double wr[4]
    cdef double wc[4]
    cdef double u, v, acc, row_acc, base
    cdef unsigned char m
    with nogil:
        for i in range(n):
            u = fr[i] - floor(fr[i])
            v = fc[i] - floor(fc[i])
            rbase = <Py_ssize_t>floor(fr[i])
            cbase = <Py_ssize_t>floor(fc[i])
            wr[0] = _cubic_outer(1.0 + u)
            wr[1] = _cubic_inner(u)
            wr[2] = _cubic_inner(1.0 - u)
            wr[3] = _cubic_outer(2.0 - u)
            wc[0] = _cubic_outer(1.0 + v)
            wc[1] = _cubic_inner(v)
            wc[2] = _cubic_inner(1.0 - v)
            wc[3] = _cubic_outer(2.0 - v)
            for k in range(4):
                ridx[k] = _clampi(rbase + k - 1, 0, rows - 1)
                cidx[k] = _clampi(cbase + k - 1, 0, cols - 1)
            # Deviation-from-base form: reproduces constants bit-exactly.
            base = src[ridx[1], cidx[1]]
            acc = 0.0
            m = 0
            for k in range(4):
                row_acc = wc[0] * (src[ridx[k], cidx[0]] - base)
                m = m | src_mask[ridx[k], cidx[0]]
                for j in range(1, 4):
                    row_acc = row_acc + wc[j] * (src[ridx[k], cidx[j]] - base)
                    m = m | src_mask[ridx[k], cidx[j]]
                acc = acc + wr[k] * row_acc
            out[i] = base + acc
            miss[i] = m
    return out_arr, miss_arr.astype(bool)


def sep_correlate_valid(const double[:, ::1] img, const double[::1] taps):
    """Separable 2-D correlation, valid mode, k-ascending accumulation."""
    cdef Py_ssize_t k = taps.shape[0]
    cdef Py_ssize_t rows = img.shape[0]
    cdef Py_ssize_t cols = img.shape[1]
    cdef Py_ssize_t out_cols = cols - k + 1
    cdef Py_ssize_t out_rows = rows - k + 1
    tmp_arr = np.zeros((rows, out_cols), dtype=np.float64)
    out_arr = np.zeros((out_rows, out_cols), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, i
    cdef double acc
    with nogil:
        for r in range(rows):
            for c in range(out_cols):
                acc = 0.0
                for i in range(k):
                    acc = acc + taps[i] * img[r, c + i]
                tmp[r, c] = acc
        for r in range(out_rows):
            for c in range(out_cols):
                acc = 0.0
                for i in range(k):
                    acc = acc + taps[i] * tmp[r + i, c]
                out[r, c] = acc
    return out_arr
