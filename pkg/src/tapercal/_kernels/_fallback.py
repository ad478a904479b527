"""Pure-numpy implementations of the hot inner loops.

These mirror the compiled extension operation-for-operation: every
floating-point expression is evaluated in the same order in both
backends (and the extension is built with FP contraction off), so the
two produce bit-identical outputs.  Keep the two files in sync.
"""

from __future__ import annotations

import numpy as np

BICUBIC_A = -0.5


def bilinear_gather(src: np.ndarray, src_mask: np.ndarray, fr: np.ndarray, fc: np.ndarray):
    """Bilinear interpolation of src at fractional indices (fr, fc).

    Tap indices are edge-clamped.  Returns (values, missing) where a
    sample is missing if any of its four taps is missing.
    """
    rows, cols = src.shape
    r0 = np.floor(fr)
    c0 = np.floor(fc)
    t = fr - r0
    s = fc - c0
    r0i = np.clip(r0.astype(np.int64), 0, rows - 1)
    r1i = np.clip(r0.astype(np.int64) + 1, 0, rows - 1)
    c0i = np.clip(c0.astype(np.int64), 0, cols - 1)
    c1i = np.clip(c0.astype(np.int64) + 1, 0, cols - 1)
    v00 = src[r0i, c0i]
    v01 = src[r0i, c1i]
    v10 = src[r1i, c0i]
    v11 = src[r1i, c1i]
    # Lerp form reproduces constant fields bit-exactly.
    top = v00 + s * (v01 - v00)
    bot = v10 + s * (v11 - v10)
    out = top + t * (bot - top)
    miss = (
        src_mask[r0i, c0i] | src_mask[r0i, c1i]
        | src_mask[r1i, c0i] | src_mask[r1i, c1i]
    )
    return out, miss.astype(bool)


def _cubic_outer(x):
    # a*(((x - 5)*x + 8)*x - 4) for 1 <= x < 2
    return BICUBIC_A * (((x - 5.0) * x + 8.0) * x - 4.0)


def _cubic_inner(x):
    # ((a+2)*x - (a+3))*x*x + 1 for 0 <= x <= 1
    return ((BICUBIC_A + 2.0) * x - (BICUBIC_A + 3.0)) * x * x + 1.0


def bicubic_gather(src: np.ndarray, src_mask: np.ndarray, fr: np.ndarray, fc: np.ndarray):
    """Cubic-convolution interpolation (a = -0.5) at fractional indices.

    Sixteen edge-clamped taps; a sample is missing if any tap is missing.
    """
    rows, cols = src.shape
    rbase = np.floor(fr).astype(np.int64)
    cbase = np.floor(fc).astype(np.int64)
    u = fr - np.floor(fr)
    v = fc - np.floor(fc)

    wr = (
        _cubic_outer(1.0 + u),
        _cubic_inner(u),
        _cubic_inner(1.0 - u),
        _cubic_outer(2.0 - u),
    )
    wc = (
        _cubic_outer(1.0 + v),
        _cubic_inner(v),
        _cubic_inner(1.0 - v),
        _cubic_outer(2.0 - v),
    )
    ridx = [np.clip(rbase + k - 1, 0, rows - 1) for k in range(4)]
    cidx = [np.clip(cbase + k - 1, 0, cols - 1) for k in range(4)]

    # Deviation-from-base form: the kernel weights sum to 1 in exact
    # arithmetic, so accumulating (tap - base) reproduces constant fields
    # bit-exactly.
    base = src[ridx[1], cidx[1]]
    acc = np.zeros(fr.shape, dtype=np.float64)
    miss = np.zeros(fr.shape, dtype=np.uint8)
    for i in range(4):
        row_acc = wc[0] * (src[ridx[i], cidx[0]] - base)
        miss |= src_mask[ridx[i], cidx[0]]
        for j in range(1, 4):
            row_acc = row_acc + wc[j] * (src[ridx[i], cidx[j]] - base)
            miss |= src_mask[ridx[i], cidx[j]]
        acc = acc + wr[i] * row_acc
    return base + acc, miss.astype(bool)


def sep_correlate_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable 2-D correlation, valid mode, k-ascending accumulation."""
    k = taps.size
    rows, cols = img.shape
    tmp = np.zeros((rows, cols - k + 1), dtype=np.float64)
    for i in range(k):
        tmp += taps[i] * img[:, i:i + cols - k + 1]
    out = np.zeros((rows - k + 1, cols - k + 1), dtype=np.float64)
    for i in range(k):
        out += taps[i] * tmp[i:i + rows - k + 1, :]
    return out
