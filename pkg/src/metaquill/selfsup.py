"""Rotation-prediction pretraining: joint supervised + pretext objective.

Images are rotated by 0/90/180/270 degrees (counter-clockwise, label 0..3) and
a small classifier head on top of the trainable image encoder must recover the
angle. Pretraining minimizes L = L_vqg + lambda * L_rot on merged (non-episodic)
data; the head is discarded before fine-tuning. With lambda = 0 the rotation
branch is skipped entirely, including its RNG draws, so the loop is
bit-identical to plain supervised pretraining.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    backward,
    concat,
    conv2d,
    cross_entropy,
    no_grad,
    relu,
    reshape,
    tensor_mean,
    transpose,
)
from .encoders import _with_bias, encode_image_cnn
from .errors import ValidationError
from .meta import _mean_loss, _trainable, clip_grad_norm
from .nn import linear, param, zeros_param

N_ROTATIONS = 4


def rotate_image(img, label: int):
    """Counter-clockwise rotation by label * 90 degrees; (C, H, W), H == W.

    One 90-degree turn maps out[i][j] = in[j][H-1-i] per channel.
    """
    if label not in (0, 1, 2, 3):
        raise ValidationError(f"rotation label must be 0..3, got {label}")
    arr = np.asarray(getattr(img, "data", img))
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValidationError(f"rotation needs a square (C, H, W) image, got {arr.shape}")
    return np.ascontiguousarray(np.rot90(arr, k=label, axes=(1, 2)))


def init_rotation_head(rng, c_in: int, h: int, w: int, width: int = 8) -> dict:
    return {"rot.conv.w": param(rng, (width, c_in, 3, 3)),
            "rot.conv.b": zeros_param((width,)),
            "rot.lin.w": param(rng, (N_ROTATIONS, width * h * w)),
            "rot.lin.b": zeros_param((N_ROTATIONS,))}


def rotation_logits(img, params: dict) -> Tensor:
    """Encoder -> conv3x3 same -> relu -> flatten -> linear, giving 4 logits."""
    if "cnn.conv1.w" not in params:
        raise ValidationError("rotation pretraining needs the trainable image encoder")
    if "rot.conv.w" not in params:
        raise ValidationError("rotation head parameters absent")
    f = encode_image_cnn(img if isinstance(img, Tensor) else Tensor(img), params)
    x = transpose(f, (2, 0, 1))
    x = relu(_with_bias(conv2d(x, params["rot.conv.w"], padding="same"), params["rot.conv.b"]))
    flat = reshape(x, (x.size,))
    return linear(flat, params["rot.lin.w"], params["rot.lin.b"])


def rotation_loss(img, label: int, params: dict) -> Tensor:
    return cross_entropy(rotation_logits(rotate_image(img, label), params), label)


def rotation_accuracy(params: dict, images) -> float:
    """Mean accuracy over all four rotations of every image."""
    hits = total = 0
    with no_grad():
        for img in images:
            for label in range(N_ROTATIONS):
                logits = rotation_logits(rotate_image(img, label), params)
                hits += int(np.argmax(logits.data)) == label
                total += 1
    return hits / total


def strip_rotation_head(params: dict) -> dict:
    head = [n for n in params if n.startswith("rot.")]
    if not head:
        raise ValidationError("no rotation head present to strip")
    return {n: p for n, p in params.items() if not n.startswith("rot.")}


# -- joint pretraining ---------------------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    lr: float = 0.01
    iters: int = 100
    batch_size: int = 8
    lam: float = 1.0
    seed: int = 0
    clip_norm: float | None = 10.0

    def __post_init__(self):
        if self.lr <= 0 or self.iters < 1 or self.batch_size < 1:
            raise ValidationError("pretrain config needs lr > 0, iters >= 1, batch >= 1")
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")


def pretrain_joint(params: dict, examples, vqg_loss_fn, image_fn, cfg: PretrainConfig,
                   log_path=None):
    """Mini-batch SGD on L_vqg + lambda * L_rot over merged data.

    vqg_loss_fn(params, example) -> scalar Tensor; image_fn(example) -> raw
    (3, H, W) array for the rotation branch. Each batch image gets one uniform
    random rotation. Returns (params, log entries).
    """
    if not examples:
        raise ValidationError("pretraining needs at least one example")
    rng = np.random.default_rng(cfg.seed)
    names = _trainable(params)
    log, log_file = [], open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for it in range(cfg.iters):
            t0 = time.perf_counter()
            take = min(cfg.batch_size, len(examples))
            batch = [examples[i] for i in rng.choice(len(examples), size=take, replace=False)]
            vqg = _mean_loss(params, batch, vqg_loss_fn)
            entry = {"iter": it, "vqg_loss": vqg.item()}
            if cfg.lam > 0:
                rots = [reshape(rotation_loss(image_fn(ex), int(rng.integers(N_ROTATIONS)),
                                              params), (1,))
                        for ex in batch]
                rot = tensor_mean(concat(rots, axis=0))
                entry["rot_loss"] = rot.item()
                total = vqg + rot * cfg.lam
            else:
                total = vqg
            grads = backward(total, wrt=[params[n] for n in names])
            grad_map = {n: grads[params[n]].data for n in names}
            grad_map, _ = clip_grad_norm(grad_map, cfg.clip_norm)
            params = {n: (Tensor(p.data - cfg.lr * grad_map[n], requires_grad=True)
                          if n in grad_map else p)
                      for n, p in params.items()}
            entry["wallclock_ms"] = (time.perf_counter() - t0) * 1000.0
            log.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()
    return params, log
