"""Reverse-mode autodiff on numpy float32 arrays.

Design notes:

* A Tensor records its parents and a backward closure.  The closure is
  written in terms of Tensor ops, so running backward under enable_grad
  (create_graph=True) builds a differentiable graph of the gradient and
  higher-order derivatives come out of the same machinery.
* backward() is pure: it returns a dict mapping requested tensors to
  gradient tensors and never mutates anything on the graph.
* Storage is float32.  matmul and reductions accumulate in float64 and
  round once at the end, which keeps finite-difference checks tight.
* Every op fail-fasts on NaN/Inf in its result (NumericError, naming the
  op and operand shapes).
* Broadcasting is deliberately restricted: equal shapes, a scalar
  (size-1) operand, or a trailing-suffix match such as (B, D) op (D,).
  Anything else must go through an explicit expand().
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .. import _kernels
from ..errors import NumericError, ValidationError

_F32 = np.float32


class _GradMode:
    enabled = True


@contextmanager
def no_grad():
    prev = _GradMode.enabled
    _GradMode.enabled = False
    try:
        yield
    finally:
        _GradMode.enabled = prev


@contextmanager
def enable_grad():
    prev = _GradMode.enabled
    _GradMode.enabled = True
    try:
        yield
    finally:
        _GradMode.enabled = prev


def is_grad_enabled() -> bool:
    return _GradMode.enabled


def _contig(arr: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray promotes 0-d to (1,); scalars must stay rank 0
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


def _as_f32(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype != _F32:
        arr = arr.astype(_F32)
    return _contig(arr)


class Tensor:
    """A float32 ndarray plus the graph bookkeeping for reverse mode."""

    __slots__ = ("data", "requires_grad", "_parents", "_bwd", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("tensor init: non-finite input data")
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bwd = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, n):
        if not isinstance(n, int) or n < 0:
            raise ValidationError("pow: only non-negative integer powers")
        if n == 0:
            return Tensor(np.ones_like(self.data))
        out = self
        for _ in range(n - 1):
            out = mul(out, self)
        return out

    # -- method sugar -----------------------------------------------------

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tensor_max(self, axis=axis, keepdims=keepdims)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(np.asarray(x, dtype=_F32))
    raise ValidationError(f"cannot use {type(x).__name__} as a tensor operand")


def _make(op: str, data: np.ndarray, parents, bwd) -> Tensor:
    """Wrap an op result, attaching graph edges when grad mode is on."""
    if not np.all(np.isfinite(data)):
        shapes = ", ".join(str(p.shape) for p in parents)
        raise NumericError(f"{op}: non-finite result (operand shapes: {shapes})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out._op = op
    if _GradMode.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    else:
        out.requires_grad = False
        out._parents = ()
        out._bwd = None
    return out


# -- broadcasting policy ------------------------------------------------


def _binary_out_shape(op: str, a: Tensor, b: Tensor):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if a.size == 1:
        return sb
    if b.size == 1:
        return sa
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa
    raise ValidationError(
        f"{op}: shapes {sa} and {sb} do not broadcast "
        "(allowed: equal, scalar, or trailing suffix)")


def _unbroadcast(g: Tensor, shape) -> Tensor:
    """Reduce a gradient back to an operand's shape (inverse of broadcast)."""
    if g.shape == shape:
        return g
    n = 1
    for d in shape:
        n *= d
    if n == 1:
        return reshape(tensor_sum(g), shape)
    out = g
    for _ in range(g.ndim - len(shape)):
        out = tensor_sum(out, axis=0)
    if out.shape != shape:
        raise ValidationError(f"unbroadcast: cannot reduce {g.shape} to {shape}")
    return out


# -- elementwise primitives ----------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_out_shape("add", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_out_shape("sub", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return _make("sub", a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_out_shape("mul", a, b)

    def bwd(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _make("mul", a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_out_shape("div", a, b)

    def bwd(g):
        ga = _unbroadcast(div(g, b), a.shape)
        gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _make("div", a.data / b.data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        return (neg(g),)

    return _make("neg", -a.data, (a,), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        return (scale(g, s),)

    return _make("scale", a.data * _F32(s), (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data.astype(np.float64)).astype(_F32)

    def bwd(g):
        yt = out  # closure over the output tensor
        return (mul(g, sub(_coerce(1.0), mul(yt, yt))),)

    out = _make("tanh", y, (a,), bwd)
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data.astype(np.float64)
    y = (1.0 / (1.0 + np.exp(-x))).astype(_F32)

    def bwd(g):
        yt = out
        return (mul(g, mul(yt, sub(_coerce(1.0), yt))),)

    out = _make("sigmoid", y, (a,), bwd)
    return out


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(_F32)

    def bwd(g):
        return (mul(g, Tensor(mask)),)

    return _make("relu", a.data * mask, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data.astype(np.float64)).astype(_F32)

    def bwd(g):
        return (mul(g, out),)

    out = _make("exp", y, (a,), bwd)
    return out


def log(a: Tensor) -> Tensor:
    y = np.log(a.data.astype(np.float64)).astype(_F32)

    def bwd(g):
        return (div(g, a),)

    return _make("log", y, (a,), bwd)


# -- matmul ---------------------------------------------------------------


def _matmul2d(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul: inner dims mismatch {a.shape} @ {b.shape}")
    y = (a.data.astype(np.float64) @ b.data.astype(np.float64)).astype(_F32)

    def bwd(g):
        return _matmul2d(g, transpose(b)), _matmul2d(transpose(a), g)

    return _make("matmul", y, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D x 2-D, with 1-D operands treated as row/column vectors."""
    if a.ndim > 2 or b.ndim > 2 or a.ndim == 0 or b.ndim == 0:
        raise ValidationError(f"matmul: ranks {a.ndim} and {b.ndim} unsupported")
    a2 = reshape(a, (1, a.shape[0])) if a.ndim == 1 else a
    b2 = reshape(b, (b.shape[0], 1)) if b.ndim == 1 else b
    out = _matmul2d(a2, b2)
    if a.ndim == 1 and b.ndim == 1:
        return reshape(out, ())
    if a.ndim == 1:
        return reshape(out, (out.shape[1],))
    if b.ndim == 1:
        return reshape(out, (out.shape[0],))
    return out


# -- shape ops -------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape) if not isinstance(shape, tuple) else shape
    old = a.shape

    def bwd(g):
        return (reshape(g, old),)

    try:
        y = _contig(a.data.reshape(shape))
    except ValueError as e:
        raise ValidationError(f"reshape: {old} -> {shape}: {e}") from None
    return _make("reshape", y, (a,), bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValidationError(f"transpose: bad axes {axes} for ndim {a.ndim}")
    inv = tuple(int(i) for i in np.argsort(axes))

    def bwd(g):
        return (transpose(g, inv),)

    return _make("transpose", _contig(a.data.transpose(axes)), (a,), bwd)


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast size-1 axes (and missing leading axes) up to shape."""
    shape = tuple(int(d) for d in shape)
    try:
        y = _contig(np.broadcast_to(a.data, shape))
    except ValueError:
        raise ValidationError(f"expand: {a.shape} -> {shape}") from None
    k = len(shape) - a.ndim
    sum_axes = list(range(k))
    for i, d in enumerate(a.shape):
        if d == 1 and shape[k + i] != 1:
            sum_axes.append(k + i)

    def bwd(g):
        out = g
        for ax in sorted(sum_axes, reverse=True):
            out = tensor_sum(out, axis=ax)
        return (reshape(out, a.shape),)

    return _make("expand", y, (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValidationError("concat: empty input list")
    nd = tensors[0].ndim
    axis = axis % nd if nd else 0
    for t in tensors:
        if t.ndim != nd:
            raise ValidationError("concat: rank mismatch")
    y = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = []
    off = 0
    for t in tensors:
        offsets.append(off)
        off += t.shape[axis]

    def bwd(g):
        return tuple(
            narrow(g, axis, offsets[i], t.shape[axis]) for i, t in enumerate(tensors))

    return _make("concat", _contig(y), tuple(tensors), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = axis % a.ndim
    if start < 0 or length < 0 or start + length > a.shape[axis]:
        raise ValidationError(
            f"narrow: [{start}:{start + length}] out of range for axis {axis} of {a.shape}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    after = a.shape[axis] - start - length

    def bwd(g):
        return (pad_axis(g, axis, start, after),)

    return _make("narrow", _contig(a.data[tuple(sl)]), (a,), bwd)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    axis = axis % a.ndim
    if before < 0 or after < 0:
        raise ValidationError("pad_axis: negative padding")
    width = [(0, 0)] * a.ndim
    width[axis] = (before, after)
    length = a.shape[axis]

    def bwd(g):
        return (narrow(g, axis, before, length),)

    return _make("pad_axis", np.pad(a.data, width), (a,), bwd)


def pad2d(a: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the last two axes of a (C, H, W) tensor."""
    if a.ndim != 3:
        raise ValidationError(f"pad2d: expected (C, H, W), got {a.shape}")
    out = a
    if top or bottom:
        out = pad_axis(out, 1, top, bottom)
    if left or right:
        out = pad_axis(out, 2, left, right)
    return out


# -- reductions -------------------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None:
        axis = int(axis) % max(a.ndim, 1)
    y = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(_F32)
    if axis is None:
        kd_shape = (1,) * a.ndim
    else:
        kd_shape = tuple(1 if i == axis else d for i, d in enumerate(a.shape))

    def bwd(g):
        return (expand(reshape(g, kd_shape), a.shape),)

    return _make("sum", np.asarray(y), (a,), bwd)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[int(axis) % a.ndim]
    if n == 0:
        raise ValidationError("mean: empty reduction")
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tensor_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; gradient flows to the first max only (ties broken by index)."""
    if axis is None:
        y = np.max(a.data, keepdims=keepdims)
        mask = np.zeros_like(a.data)
        mask.reshape(-1)[int(np.argmax(a.data))] = 1.0
        kd_shape = (1,) * a.ndim
    else:
        axis = int(axis) % a.ndim
        y = np.max(a.data, axis=axis, keepdims=keepdims)
        am = np.argmax(a.data, axis=axis)
        mask = np.zeros_like(a.data)
        np.put_along_axis(mask, np.expand_dims(am, axis), 1.0, axis)
        kd_shape = tuple(1 if i == axis else d for i, d in enumerate(a.shape))
    mask_t = Tensor(mask)

    def bwd(g):
        return (mul(expand(reshape(g, kd_shape), a.shape), mask_t),)

    return _make("max", np.asarray(y), (a,), bwd)


# -- structured linear primitives (conv / pool / embedding) -----------------


def im2col(a: Tensor, kh: int, kw: int, sh: int, sw: int) -> Tensor:
    if a.ndim != 3:
        raise ValidationError(f"im2col: expected (C, H, W), got {a.shape}")
    c, h, w = a.shape
    if h < kh or w < kw:
        raise ValidationError(f"im2col: kernel ({kh},{kw}) larger than input ({h},{w})")

    def bwd(g):
        return (col2im(g, c, h, w, kh, kw, sh, sw),)

    return _make("im2col", _kernels.im2col(a.data, kh, kw, sh, sw), (a,), bwd)


def col2im(cols: Tensor, c: int, h: int, w: int, kh: int, kw: int, sh: int, sw: int) -> Tensor:
    def bwd(g):
        return (im2col(g, kh, kw, sh, sw),)

    y = _kernels.col2im(cols.data, c, h, w, kh, kw, sh, sw)
    return _make("col2im", y, (cols,), bwd)


def _pool_scatter(g: Tensor, idx: np.ndarray, shape) -> Tensor:
    def bwd(g2):
        return (_pool_gather(g2, idx, g.shape),)

    return _make("pool_scatter", _kernels.pool_scatter(g.data, idx, shape), (g,), bwd)


def _pool_gather(a: Tensor, idx: np.ndarray, out_shape) -> Tensor:
    def bwd(g):
        return (_pool_scatter(g, idx, a.shape),)

    y = _kernels.pool_gather(a.data, idx).reshape(out_shape)
    return _make("pool_gather", y, (a,), bwd)


def maxpool2x2(a: Tensor) -> Tensor:
    """2x2/stride-2 max pool on (C, H, W); odd trailing rows/cols are cropped."""
    if a.ndim != 3:
        raise ValidationError(f"maxpool2x2: expected (C, H, W), got {a.shape}")
    c, h, w = a.shape
    if h < 2 or w < 2:
        raise ValidationError(f"maxpool2x2: input {a.shape} too small")
    if h % 2:
        a = narrow(a, 1, 0, h - 1)
    if w % 2:
        a = narrow(a, 2, 0, w - 1)
    pooled, idx = _kernels.maxpool2x2(a.data)
    src = a

    def bwd(g):
        return (_pool_scatter(g, idx, src.shape),)

    return _make("maxpool2x2", pooled, (a,), bwd)


def embed_lookup(table: Tensor, indices) -> Tensor:
    """Row gather: table (V, D), indices int scalar or 1-D -> (D,) or (N, D)."""
    if table.ndim != 2:
        raise ValidationError(f"embed_lookup: table must be 2-D, got {table.shape}")
    idx = np.asarray(indices)
    if idx.ndim > 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ValidationError("embed_lookup: indices must be an int scalar or 1-D ints")
    v = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise ValidationError(f"embed_lookup: index out of range [0, {v})")
    scalar = idx.ndim == 0
    idx1 = idx.reshape(-1).astype(np.int64)

    def bwd(g):
        g2 = reshape(g, (1, table.shape[1])) if scalar else g
        return (_rows_scatter(g2, idx1, v),)

    y = table.data[idx1]
    if scalar:
        y = y[0]
    return _make("embed_lookup", _contig(y), (table,), bwd)


def _rows_scatter(g: Tensor, idx1: np.ndarray, n_rows: int) -> Tensor:
    out = np.zeros((n_rows, g.shape[1]), dtype=np.float64)
    np.add.at(out, idx1, g.data.astype(np.float64))

    def bwd(g2):
        return (embed_lookup(g2, idx1),)

    return _make("rows_scatter", out.astype(_F32), (g,), bwd)


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


# -- composites ---------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.ndim == 0:
        raise ValidationError("softmax: scalar input")
    axis = axis % a.ndim
    m = expand(stop_gradient(tensor_max(a, axis=axis, keepdims=True)), a.shape)
    e = exp(sub(a, m))
    denom = expand(tensor_sum(e, axis=axis, keepdims=True), a.shape)
    return div(e, denom)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.ndim == 0:
        raise ValidationError("log_softmax: scalar input")
    axis = axis % a.ndim
    m = expand(stop_gradient(tensor_max(a, axis=axis, keepdims=True)), a.shape)
    shift = sub(a, m)
    lse = log(tensor_sum(exp(shift), axis=axis, keepdims=True))
    return sub(shift, expand(lse, a.shape))


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Negative log-likelihood of one class from a 1-D logit vector."""
    if logits.ndim != 1:
        raise ValidationError(f"cross_entropy: expected 1-D logits, got {logits.shape}")
    target = int(target)
    if not 0 <= target < logits.shape[0]:
        raise ValidationError(f"cross_entropy: target {target} out of range {logits.shape}")
    lp = log_softmax(logits, axis=0)
    return neg(reshape(narrow(lp, 0, target, 1), ()))


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """Cross-correlation of (C_in, H, W) with (C_out, C_in, KH, KW)."""
    if x.ndim != 3 or kernel.ndim != 4:
        raise ValidationError(f"conv2d: got input {x.shape}, kernel {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if x.shape[0] != c_in:
        raise ValidationError(f"conv2d: channel mismatch {x.shape[0]} vs {c_in}")
    if stride < 1:
        raise ValidationError("conv2d: stride must be >= 1")
    if padding == "same":
        h, w = x.shape[1], x.shape[2]
        oh = -(-h // stride)
        ow = -(-w // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - w, 0)
        x = pad2d(x, ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
    elif padding != "valid":
        raise ValidationError(f"conv2d: unknown padding {padding!r}")
    h, w = x.shape[1], x.shape[2]
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValidationError(
            f"conv2d: degenerate output {oh}x{ow} for input {x.shape}, kernel ({kh},{kw})")
    cols = im2col(x, kh, kw, stride, stride)
    kmat = reshape(kernel, (c_out, c_in * kh * kw))
    return reshape(matmul(kmat, cols), (c_out, oh, ow))


# -- backward -------------------------------------------------------------------


def backward(loss: Tensor, wrt=None, create_graph: bool = False):
    """Reverse-mode gradient of a scalar loss.

    Returns a dict mapping each requested tensor (default: every reachable
    leaf with requires_grad) to its gradient tensor.  Tensors in wrt that
    the loss does not depend on get zeros.  The pass is pure: no .grad
    fields, no mutation of the forward graph.
    """
    if loss.size != 1:
        raise ValidationError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValidationError("backward: loss does not depend on any tracked tensor")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    if wrt is None:
        wrt = [t for t in topo if not t._parents]
    wrt = list(wrt)
    wrt_ids = {id(t) for t in wrt}

    grads: dict = {id(loss): Tensor(np.ones_like(loss.data))}
    results: dict = {}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if id(node) in wrt_ids:
                results[id(node)] = g
            if node._bwd is None:
                continue
            pgrads = node._bwd(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                held = grads.get(id(p))
                grads[id(p)] = pg if held is None else add(held, pg)

    out = {}
    for t in wrt:
        got = results.get(id(t))
        out[t] = got if got is not None else Tensor(np.zeros_like(t.data))
    return out


# -- factories ---------------------------------------------------------------


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_F32), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_F32), requires_grad=requires_grad)


def full(shape, value: float, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=_F32), requires_grad=requires_grad)


def randn(rng: np.random.Generator, shape, std: float = 1.0,
          requires_grad: bool = False) -> Tensor:
    return Tensor(rng.standard_normal(shape).astype(_F32) * _F32(std),
                  requires_grad=requires_grad)
