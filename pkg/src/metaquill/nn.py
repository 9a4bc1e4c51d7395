"""Initializers plus the linear and LSTM-cell building blocks.

Everything downstream is batchless: activations are 1-D vectors, parameters
live in flat dicts of named Tensors, and adapted parameter sets produced by
inner-loop updates are plain dict rebinds.
"""

import numpy as np

from .autodiff import Tensor, add, matmul, mul, narrow, sigmoid, tanh
from .errors import ValidationError


def glorot(rng: np.random.Generator, shape) -> np.ndarray:
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 4:
        fan_in = shape[1] * shape[2] * shape[3]
        fan_out = shape[0] * shape[2] * shape[3]
    else:
        raise ValidationError(f"glorot init undefined for shape {shape}")
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def param(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(glorot(rng, shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(w, x), b)


def init_lstm(rng: np.random.Generator, d_in: int, d_hidden: int) -> dict:
    b = np.zeros(4 * d_hidden, dtype=np.float32)
    b[d_hidden:2 * d_hidden] = 1.0  # forget gate starts open
    return {"w_ih": param(rng, (4 * d_hidden, d_in)),
            "w_hh": param(rng, (4 * d_hidden, d_hidden)),
            "b": Tensor(b, requires_grad=True)}


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor):
    """One step of a standard LSTM cell; gate order [input, forget, output, candidate]."""
    d = h.shape[0]
    if w_ih.shape[0] != 4 * d or w_hh.shape != (4 * d, d) or b.shape != (4 * d,):
        raise ValidationError(
            f"lstm_cell: inconsistent dims h={h.shape} w_ih={w_ih.shape} "
            f"w_hh={w_hh.shape} b={b.shape}")
    z = add(add(matmul(w_ih, x), matmul(w_hh, h)), b)
    i = sigmoid(narrow(z, 0, 0, d))
    f = sigmoid(narrow(z, 0, d, d))
    o = sigmoid(narrow(z, 0, 2 * d, d))
    g = tanh(narrow(z, 0, 3 * d, d))
    c2 = add(mul(f, c), mul(i, g))
    h2 = mul(o, tanh(c2))
    return h2, c2
