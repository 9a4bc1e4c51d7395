"""Feature-wise conditioning: map side info to per-channel scale/shift vectors.

gamma carries a +1 bias so zero-initialized heads start at identity
conditioning, which keeps early inner-loop steps stable.
"""

import numpy as np

from .autodiff import Tensor, add, mul, tanh
from .errors import ValidationError
from .nn import linear, param, zeros_param


def init_film(rng, d_s: int, c: int, trunk_width: int = 64) -> dict:
    """Shared trunk with near-zero heads: starts close to gamma=1, beta=0.
    Heads get tiny random values rather than exact zeros so gradient reaches
    the trunk and the side encoders from the first step."""
    def small(shape):
        return Tensor((rng.standard_normal(shape) * 0.01).astype(np.float32),
                      requires_grad=True)
    return {
        "film.w0": param(rng, (trunk_width, d_s)),
        "film.b0": zeros_param((trunk_width,)),
        "film.wg": small((c, trunk_width)),
        "film.bg": zeros_param((c,)),
        "film.wb": small((c, trunk_width)),
        "film.bb": zeros_param((c,)),
    }


def compute_gamma_beta(s: Tensor, params: dict, prefix: str = "film."):
    if s.ndim != 1:
        raise ValidationError(f"side embedding must be 1-D, got {s.shape}")
    trunk = tanh(linear(s, params[prefix + "w0"], params[prefix + "b0"]))
    ones = Tensor(np.ones(params[prefix + "bg"].shape[0], dtype=np.float32))
    gamma = add(linear(trunk, params[prefix + "wg"], params[prefix + "bg"]), ones)
    beta = linear(trunk, params[prefix + "wb"], params[prefix + "bb"])
    return gamma, beta


def apply_film(f: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-channel affine G(x, y) = gamma * F(x, y) + beta on an (h, w, c) map."""
    if f.ndim != 3:
        raise ValidationError(f"feature map must be (h, w, c), got {f.shape}")
    c = f.shape[2]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValidationError(
            f"scale/shift lengths {gamma.shape}/{beta.shape} do not match {c} channels")
    return add(mul(f, gamma), beta)
