"""Numpy implementations of the hot kernels.

Drop-in fallback for the compiled extension; both backends must produce
bit-identical outputs (same accumulation order and precision), so the
engine's determinism contract does not depend on which one is loaded.
"""

import numpy as np

NAME = "numpy"


def im2col(xp, kh, kw, sh, sw):
    """Unfold (C,H,W) into patch columns of shape (C*kh*kw, oh*ow).

    Column layout: channel-major, then kernel row, then kernel col; spatial
    positions run row-major. Pure gather, no accumulation.
    """
    c, h, w = xp.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    out = np.empty((c, kh, kw, oh, ow), dtype=np.float32)
    for p in range(kh):
        for q in range(kw):
            out[:, p, q] = xp[:, p : p + sh * oh : sh, q : q + sw * ow : sw]
    return out.reshape(c * kh * kw, oh * ow)


def col2im(cols, c, h, w, kh, kw, sh, sw):
    """Adjoint of im2col: scatter-add columns back into a (C,H,W) array.

    Accumulates in float64, (p,q) outer loop, so the compiled backend can
    reproduce the exact same rounding.
    """
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    acc = np.zeros((c, h, w), dtype=np.float64)
    colr = cols.reshape(c, kh, kw, oh, ow).astype(np.float64)
    for p in range(kh):
        for q in range(kw):
            acc[:, p : p + sh * oh : sh, q : q + sw * ow : sw] += colr[:, p, q]
    return acc.astype(np.float32)


def maxpool2x2(x):
    """2x2/stride-2 max pool of (C,H,W) with even H,W.

    Returns (pooled, idx) where idx holds the flat index into x of each
    selected element (first maximum wins on ties).
    """
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    windows = x.reshape(c, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    k = windows.argmax(axis=3)
    out = np.take_along_axis(windows, k[..., None], axis=3)[..., 0]
    ci, yi, xi = np.indices((c, h2, w2))
    rows = 2 * yi + k // 2
    cols = 2 * xi + k % 2
    idx = (ci * h + rows) * w + cols
    return np.ascontiguousarray(out), idx.astype(np.int64)


def pool_gather(x, idx):
    """Gather x.flat at idx (same shape as idx)."""
    return np.ascontiguousarray(x.reshape(-1)[idx])


def pool_scatter(g, idx, shape):
    """Adjoint of pool_gather: place g at flat positions idx of zeros(shape).

    Pool windows are disjoint so idx entries are unique and plain assignment
    is exact.
    """
    out = np.zeros(shape, dtype=np.float32).reshape(-1)
    out[idx.reshape(-1)] = g.reshape(-1)
    return out.reshape(shape)
