"""Bit-equivalence of the compiled kernels against the numpy fallback."""

import numpy as np
import pytest

from metaquill import _kernels
from metaquill._kernels import np_backend

try:
    from metaquill._kernels import _ckernels
except ImportError:
    _ckernels = None

needs_compiled = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _rand(rng, shape):
    return rng.standard_normal(shape).astype(np.float32)


@needs_compiled
def test_im2col_bit_identical():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = int(rng.integers(1, 4))
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        sh, sw = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = kh + int(rng.integers(0, 6))
        w = kw + int(rng.integers(0, 6))
        x = _rand(rng, (c, h, w))
        a = np_backend.im2col(x, kh, kw, sh, sw)
        b = _ckernels.im2col(x, kh, kw, sh, sw)
        assert np.array_equal(a, b)


@needs_compiled
def test_col2im_bit_identical():
    rng = np.random.default_rng(1)
    for _ in range(50):
        c = int(rng.integers(1, 4))
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        sh, sw = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = kh + int(rng.integers(0, 6))
        w = kw + int(rng.integers(0, 6))
        oh = (h - kh) // sh + 1
        ow = (w - kw) // sw + 1
        cols = _rand(rng, (c * kh * kw, oh * ow))
        a = np_backend.col2im(cols, c, h, w, kh, kw, sh, sw)
        b = _ckernels.col2im(cols, c, h, w, kh, kw, sh, sw)
        assert np.array_equal(a, b)


@needs_compiled
def test_maxpool_bit_identical_including_ties():
    rng = np.random.default_rng(2)
    for trial in range(50):
        c = int(rng.integers(1, 4))
        h, w = 2 * int(rng.integers(1, 5)), 2 * int(rng.integers(1, 5))
        x = _rand(rng, (c, h, w))
        if trial % 3 == 0:
            # force ties inside windows: quantize to a few levels
            x = np.round(x).astype(np.float32)
        p1, i1 = np_backend.maxpool2x2(x)
        p2, i2 = _ckernels.maxpool2x2(x)
        assert np.array_equal(p1, p2)
        assert np.array_equal(i1, i2)


@needs_compiled
def test_pool_gather_scatter_bit_identical():
    rng = np.random.default_rng(3)
    x = _rand(rng, (3, 6, 8))
    _, idx = np_backend.maxpool2x2(x)
    g = _rand(rng, idx.shape)
    assert np.array_equal(np_backend.pool_gather(x, idx), _ckernels.pool_gather(x, idx))
    assert np.array_equal(
        np_backend.pool_scatter(g, idx, x.shape), _ckernels.pool_scatter(g, idx, x.shape))


def test_backend_env_selection(monkeypatch):
    import importlib

    monkeypatch.setenv("METAQUILL_KERNELS", "numpy")
    mod = importlib.reload(_kernels)
    assert mod.BACKEND == "numpy"
    monkeypatch.delenv("METAQUILL_KERNELS")
    mod = importlib.reload(_kernels)
    assert mod.BACKEND in ("compiled", "numpy")
    # leave the module in its default state for other tests
    importlib.reload(_kernels)


def test_col2im_is_adjoint_of_im2col():
    # <im2col(x), y> == <x, col2im(y)> for a linear op pair
    rng = np.random.default_rng(4)
    x = _rand(rng, (2, 5, 7))
    cols = np_backend.im2col(x, 3, 2, 2, 1)
    y = _rand(rng, cols.shape)
    lhs = float(np.sum(cols.astype(np.float64) * y.astype(np.float64)))
    back = np_backend.col2im(y, 2, 5, 7, 3, 2, 2, 1)
    rhs = float(np.sum(x.astype(np.float64) * back.astype(np.float64)))
    assert abs(lhs - rhs) <= 1e-3 * max(1.0, abs(lhs))
