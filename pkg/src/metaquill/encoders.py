"""Image, category, and answer encoders plus side-information fusion.

Image features can come from a frozen on-disk store (precomputed backend) or
from a small trainable CNN. Feature maps are (h, w, c) at the module boundary;
the CNN works in (c, h, w) internally and transposes on the way out.
"""

import json
import os

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    conv2d,
    embed_lookup,
    expand,
    maxpool2x2,
    narrow,
    relu,
    reshape,
    tanh,
    transpose,
)
from .autodiff.tnsr_io import read_tensor, write_tensor
from .errors import ValidationError
from .nn import init_lstm, linear, lstm_cell, param, zeros_param
from .vocab import Vocabulary

CNN_WIDTHS = (8, 16, 16)


# -- precomputed feature store ---------------------------------------------------


class FeatureStore:
    """Directory of <image_id>.tnsr files plus index.json {image_id -> filename}."""

    def __init__(self, root, index: dict):
        self.root = root
        self.index = dict(index)

    @classmethod
    def load(cls, root) -> "FeatureStore":
        index_path = os.path.join(root, "index.json")
        if not os.path.exists(index_path):
            raise ValidationError(f"feature store {root}: missing index.json")
        with open(index_path, encoding="utf-8") as f:
            return cls(root, json.load(f))

    def ids(self):
        return sorted(self.index)

    def get(self, image_id: str) -> np.ndarray:
        if image_id not in self.index:
            raise ValidationError(f"feature store has no entry for image_id {image_id!r}")
        return read_tensor(os.path.join(self.root, self.index[image_id]))


def write_feature_store(root, features: dict) -> FeatureStore:
    os.makedirs(root, exist_ok=True)
    index = {}
    for image_id in sorted(features):
        fname = f"{image_id}.tnsr"
        write_tensor(os.path.join(root, fname), features[image_id])
        index[image_id] = fname
    with open(os.path.join(root, "index.json"), "w", encoding="utf-8") as f:
        json.dump(index, f, indent=1, sort_keys=True)
    return FeatureStore(root, index)


def encode_image_precomputed(image_id: str, store: FeatureStore, expect=None) -> Tensor:
    """Fetch a frozen (h, w, c) feature map; never receives gradient."""
    arr = store.get(image_id)
    if arr.ndim != 3:
        raise ValidationError(
            f"feature for {image_id!r} must be rank 3 (h, w, c), got shape {arr.shape}")
    if expect is not None and tuple(arr.shape) != tuple(expect):
        raise ValidationError(
            f"feature for {image_id!r} has shape {arr.shape}, expected {tuple(expect)}")
    return Tensor(arr)


# -- tiny CNN backend --------------------------------------------------------------


def init_cnn(rng, c_out: int) -> dict:
    widths = CNN_WIDTHS + (c_out,)
    params, c_in = {}, 3
    for i, w in enumerate(widths, start=1):
        params[f"cnn.conv{i}.w"] = param(rng, (w, c_in, 3, 3))
        params[f"cnn.conv{i}.b"] = zeros_param((w,))
        c_in = w
    return params


def _with_bias(x: Tensor, b: Tensor) -> Tensor:
    return x + expand(reshape(b, (b.shape[0], 1, 1)), x.shape)


def encode_image_cnn(img: Tensor, params: dict, prefix: str = "cnn.") -> Tensor:
    """[conv3x3 valid -> relu -> maxpool2x2] x 3, then conv3x3 same; returns (h, w, c)."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValidationError(f"expected raw image (3, H, W), got {img.shape}")
    if img.shape[1] < 8 or img.shape[2] < 8:
        raise ValidationError(f"image {img.shape} too small for three pooling stages")
    x = img
    for i in (1, 2, 3):
        x = conv2d(x, params[f"{prefix}conv{i}.w"])
        x = maxpool2x2(relu(_with_bias(x, params[f"{prefix}conv{i}.b"])))
    x = conv2d(x, params[f"{prefix}conv4.w"], padding="same")
    x = _with_bias(x, params[f"{prefix}conv4.b"])
    return transpose(x, (1, 2, 0))


# -- side information ---------------------------------------------------------------


def init_category_encoder(rng, n_categories: int, d_c: int, hidden: int) -> dict:
    return {"cat.w1": param(rng, (hidden, n_categories)), "cat.b1": zeros_param((hidden,)),
            "cat.w2": param(rng, (d_c, hidden)), "cat.b2": zeros_param((d_c,))}


def encode_category(cat: int, params: dict, n_categories: int, prefix: str = "cat.") -> Tensor:
    if not 0 <= cat < n_categories:
        raise ValidationError(f"category id {cat} out of range [0, {n_categories})")
    one_hot = np.zeros(n_categories, dtype=np.float32)
    one_hot[cat] = 1.0
    h = tanh(linear(Tensor(one_hot), params[prefix + "w1"], params[prefix + "b1"]))
    return linear(h, params[prefix + "w2"], params[prefix + "b2"])


def init_answer_encoder(rng, d_w: int, d_a: int) -> dict:
    cell = init_lstm(rng, d_w, d_a)
    return {f"ans.{k}": v for k, v in cell.items()}


def encode_answer(tokens, table: Tensor, params: dict, prefix: str = "ans.") -> Tensor:
    """Final hidden state of a single-layer LSTM over the token embeddings."""
    idx = np.asarray(tokens)
    if idx.size == 0:
        raise ValidationError("answer encoder needs at least one token")
    emb = embed_lookup(table, idx)
    d_a = params[prefix + "w_hh"].shape[1]
    h = Tensor(np.zeros(d_a, dtype=np.float32))
    c = Tensor(np.zeros(d_a, dtype=np.float32))
    for t in range(emb.shape[0]):
        x = reshape(narrow(emb, 0, t, 1), (emb.shape[1],))
        h, c = lstm_cell(x, h, c, params[prefix + "w_ih"],
                         params[prefix + "w_hh"], params[prefix + "b"])
    return h


def combine_side_info(cat_emb, ans_emb) -> Tensor:
    """Concatenate in fixed (category, answer) order; absent parts shrink d_s."""
    if cat_emb is None and ans_emb is None:
        raise ValidationError("side information requested but neither category nor answer given")
    if cat_emb is None:
        return ans_emb
    if ans_emb is None:
        return cat_emb
    return concat([cat_emb, ans_emb], axis=0)


# -- embedding tables ----------------------------------------------------------------


class EmbeddingTable:
    """Word embeddings: a (V, d_w) tensor tied to a vocabulary, optionally frozen."""

    def __init__(self, vocab: Vocabulary, table: Tensor, trainable: bool = True):
        if table.ndim != 2 or table.shape[0] != len(vocab):
            raise ValidationError(
                f"embedding table shape {table.shape} does not match vocab size {len(vocab)}")
        table.requires_grad = bool(trainable)
        self.vocab = vocab
        self.table = table
        self.trainable = bool(trainable)

    @classmethod
    def init(cls, rng, vocab: Vocabulary, d_w: int, trainable: bool = True) -> "EmbeddingTable":
        data = (rng.standard_normal((len(vocab), d_w)) * 0.1).astype(np.float32)
        return cls(vocab, Tensor(data, requires_grad=trainable), trainable)

    def save(self, tnsr_path, vocab_path) -> None:
        write_tensor(tnsr_path, self.table.data)
        self.vocab.save(vocab_path)

    @classmethod
    def load(cls, tnsr_path, vocab_path, trainable: bool = False) -> "EmbeddingTable":
        vocab = Vocabulary.load(vocab_path)
        return cls(vocab, Tensor(read_tensor(tnsr_path)), trainable)
