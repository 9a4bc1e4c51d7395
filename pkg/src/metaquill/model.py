"""Model assembly: config, parameter init, and the functional loss/decode API.

Parameters are a flat dict name -> Tensor so that inner-loop adaptation can
produce updated copies without touching module state. Two wirings:

  scale_shift     side info -> (gamma, beta) -> feature conditioning
  no_scale_shift  features untouched; side embedding appended to the decoder
                  LSTM input and word-head input at every step

A model may also run with no side information at all (only in no_scale_shift
mode), which serves as the no-side baseline.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .conditioning import apply_film, compute_gamma_beta, init_film
from .decoder import (
    decode_greedy,
    init_attention,
    init_decoder_lstm,
    init_head,
    teacher_forced_loss,
)
from .encoders import (
    combine_side_info,
    encode_answer,
    encode_category,
    encode_image_cnn,
    init_answer_encoder,
    init_category_encoder,
    init_cnn,
)
from .errors import ValidationError

MODES = ("scale_shift", "no_scale_shift")
BACKENDS = ("precomputed", "tiny_cnn")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_categories: int
    mode: str = "scale_shift"
    image_backend: str = "tiny_cnn"
    use_category: bool = True
    use_answer: bool = False
    feat_c: int = 16
    d_c: int = 32
    d_a: int = 32
    d_h: int = 64
    d_att: int = 64
    d_p: int = 64
    d_w: int = 32
    trunk_width: int = 64
    cat_hidden: int = 32
    max_len: int = 20
    train_embeddings: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.image_backend not in BACKENDS:
            raise ValidationError(f"image_backend must be one of {BACKENDS}")
        if self.vocab_size < 4:
            raise ValidationError("vocab must include the four reserved tokens")
        if self.mode == "scale_shift" and self.d_side == 0:
            raise ValidationError(
                "scale_shift mode needs side information (category and/or answer)")

    @property
    def d_side(self) -> int:
        return self.d_c * self.use_category + self.d_a * self.use_answer

    @property
    def d_side_decoder(self) -> int:
        # the decoder sees the side embedding only when conditioning is bypassed
        return self.d_side if self.mode == "no_scale_shift" else 0


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    """All trainable tensors, keyed by dotted names; deterministic given rng state."""
    params = {}
    emb = (rng.standard_normal((cfg.vocab_size, cfg.d_w)) * 0.1).astype(np.float32)
    params["emb.E"] = Tensor(emb, requires_grad=cfg.train_embeddings)
    if cfg.use_category:
        params.update(init_category_encoder(rng, cfg.n_categories, cfg.d_c, cfg.cat_hidden))
    if cfg.use_answer:
        params.update(init_answer_encoder(rng, cfg.d_w, cfg.d_a))
    if cfg.mode == "scale_shift":
        params.update(init_film(rng, cfg.d_side, cfg.feat_c, cfg.trunk_width))
    if cfg.image_backend == "tiny_cnn":
        params.update(init_cnn(rng, cfg.feat_c))
    params.update(init_attention(rng, cfg.d_h, cfg.feat_c, cfg.d_att))
    params.update(init_decoder_lstm(rng, cfg.feat_c, cfg.d_w, cfg.d_side_decoder, cfg.d_h))
    params.update(init_head(rng, cfg.vocab_size, cfg.d_h, cfg.feat_c, cfg.d_w,
                            cfg.d_side_decoder, cfg.d_p))
    return params


def side_embedding(params: dict, cfg: ModelConfig, category, answer_tokens):
    """Combined (category, answer) embedding, or None when the model uses no side info."""
    if cfg.d_side == 0:
        return None
    cat_emb = ans_emb = None
    if cfg.use_category:
        if category is None:
            raise ValidationError("model is configured to use category but none was given")
        cat_emb = encode_category(int(category), params, cfg.n_categories)
    if cfg.use_answer:
        if answer_tokens is None:
            raise ValidationError("model is configured to use answer but none was given")
        ans_emb = encode_answer(answer_tokens, params["emb.E"], params)
    return combine_side_info(cat_emb, ans_emb)


def features(params: dict, cfg: ModelConfig, image) -> Tensor:
    """(h, w, c) feature map from either backend.

    `image` is a raw (3, H, W) array/Tensor for tiny_cnn, or a precomputed
    (h, w, c) Tensor (kept frozen) for the precomputed backend.
    """
    if cfg.image_backend == "tiny_cnn":
        img = image if isinstance(image, Tensor) else Tensor(image)
        return encode_image_cnn(img, params)
    f = image if isinstance(image, Tensor) else Tensor(image)
    if f.ndim != 3 or f.shape[2] != cfg.feat_c:
        raise ValidationError(
            f"precomputed features must be (h, w, {cfg.feat_c}), got {f.shape}")
    return f


def conditioned_features(params: dict, cfg: ModelConfig, f: Tensor, side_emb):
    """Returns (G, decoder_side): FiLM-transformed features, or the bypass wiring."""
    if cfg.mode == "scale_shift":
        gamma, beta = compute_gamma_beta(side_emb, params)
        return apply_film(f, gamma, beta), None
    return f, side_emb


def question_loss(params: dict, cfg: ModelConfig, image, category, answer_tokens, gold):
    """Teacher-forced mean cross-entropy for one example; differentiable in params."""
    s = side_embedding(params, cfg, category, answer_tokens)
    f = features(params, cfg, image)
    g, dec_side = conditioned_features(params, cfg, f, s)
    return teacher_forced_loss(g, dec_side, gold, params, params["emb.E"], cfg.max_len)


def generate(params: dict, cfg: ModelConfig, image, category, answer_tokens, max_len=None):
    """Greedy-decoded token ids (specials stripped)."""
    s = side_embedding(params, cfg, category, answer_tokens)
    f = features(params, cfg, image)
    g, dec_side = conditioned_features(params, cfg, f, s)
    return decode_greedy(g, dec_side, params, params["emb.E"],
                         cfg.max_len if max_len is None else max_len)
