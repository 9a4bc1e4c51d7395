"""Question decoder: soft spatial attention over the conditioned feature map,
an LSTM cell, and a deep-output word head.

Per-location attention score: theta_h . tanh(W_h h_{t-1} + U G(x,y) + b_h) + b,
normalized with a spatial softmax; the context is the attention-weighted sum of
G. The word head scores every vocab entry v as
theta_p[v] . tanh(W_p [h_t, context, E(z_{t-1})] + b_p) + d.
In no-scale-shift mode, the side embedding is appended to both the LSTM input
and the head input at every step.
"""

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    cross_entropy,
    embed_lookup,
    matmul,
    narrow,
    no_grad,
    reshape,
    softmax,
    tanh,
    tensor_mean,
    transpose,
)
from .errors import ValidationError
from .nn import init_lstm, lstm_cell, param, zeros_param
from .vocab import BOS, EOS


def init_attention(rng, d_h: int, c: int, d_att: int) -> dict:
    theta = (rng.standard_normal(d_att) / np.sqrt(d_att)).astype(np.float32)
    return {"dec.att.w_h": param(rng, (d_att, d_h)),
            "dec.att.u": param(rng, (d_att, c)),
            "dec.att.b_h": zeros_param((d_att,)),
            "dec.att.theta": Tensor(theta, requires_grad=True),
            "dec.att.b": zeros_param(())}


def attention(g: Tensor, h_prev: Tensor, params: dict, prefix: str = "dec.att."):
    """Spatial softmax attention; returns (alpha (h, w), context (c,))."""
    if g.ndim != 3:
        raise ValidationError(f"attention expects (h, w, c) features, got {g.shape}")
    hh, ww, c = g.shape
    g_flat = reshape(g, (hh * ww, c))
    pre = matmul(g_flat, transpose(params[prefix + "u"]))        # (hw, d_att)
    pre = add(pre, matmul(params[prefix + "w_h"], h_prev))       # + W_h h, per location
    pre = add(pre, params[prefix + "b_h"])
    scores = add(matmul(tanh(pre), params[prefix + "theta"]), params[prefix + "b"])
    alpha = softmax(scores)
    context = reshape(matmul(reshape(alpha, (1, hh * ww)), g_flat), (c,))
    return reshape(alpha, (hh, ww)), context


def init_decoder_lstm(rng, c: int, d_w: int, d_side: int, d_h: int) -> dict:
    cell = init_lstm(rng, c + d_w + d_side, d_h)
    return {f"dec.lstm.{k}": v for k, v in cell.items()}


def decoder_step(h, cst, context, prev_emb, side_emb, params, prefix: str = "dec.lstm."):
    parts = [context, prev_emb] + ([side_emb] if side_emb is not None else [])
    x = concat(parts, axis=0)
    return lstm_cell(x, h, cst, params[prefix + "w_ih"],
                     params[prefix + "w_hh"], params[prefix + "b"])


def init_head(rng, vocab_size: int, d_h: int, c: int, d_w: int, d_side: int, d_p: int) -> dict:
    return {"dec.head.w_p": param(rng, (d_p, d_h + c + d_w + d_side)),
            "dec.head.b_p": zeros_param((d_p,)),
            "dec.head.theta": param(rng, (vocab_size, d_p)),
            "dec.head.d": zeros_param(())}


def head_logits(h_t, context, prev_emb, side_emb, params, prefix: str = "dec.head."):
    parts = [h_t, context, prev_emb] + ([side_emb] if side_emb is not None else [])
    u = concat(parts, axis=0)
    hidden = tanh(add(matmul(params[prefix + "w_p"], u), params[prefix + "b_p"]))
    return add(matmul(params[prefix + "theta"], hidden), params[prefix + "d"])


def word_distribution(h_t, context, prev_emb, side_emb, params) -> Tensor:
    return softmax(head_logits(h_t, context, prev_emb, side_emb, params))


def _zero_state(params) -> tuple:
    d_h = params["dec.lstm.w_hh"].shape[1]
    return (Tensor(np.zeros(d_h, dtype=np.float32)),
            Tensor(np.zeros(d_h, dtype=np.float32)))


def _check_gold(gold, max_len: int):
    gold = [int(t) for t in gold]
    if len(gold) < 2:
        raise ValidationError("gold sequence needs at least <bos> and <eos>")
    if len(gold) > max_len:
        raise ValidationError(f"gold length {len(gold)} exceeds max_len {max_len}")
    if gold[0] != BOS or gold[-1] != EOS:
        raise ValidationError("gold sequence must start with <bos> and end with <eos>")
    return gold


def teacher_forced_loss(g, side_emb, gold, params, table, max_len: int = 20) -> Tensor:
    """Mean cross-entropy over steps, feeding the gold previous word each step."""
    gold = _check_gold(gold, max_len)
    h, cst = _zero_state(params)
    losses = []
    for t in range(1, len(gold)):
        prev_emb = embed_lookup(table, gold[t - 1])
        _, context = attention(g, h, params)
        h, cst = decoder_step(h, cst, context, prev_emb, side_emb, params)
        logits = head_logits(h, context, prev_emb, side_emb, params)
        losses.append(reshape(cross_entropy(logits, gold[t]), (1,)))
    return tensor_mean(concat(losses, axis=0))


def decode_greedy(g, side_emb, params, table, max_len: int = 20):
    """Argmax decoding from <bos>; stops at <eos> or max_len tokens. Returns
    generated token ids without the specials."""
    out = []
    with no_grad():
        h, cst = _zero_state(params)
        prev = BOS
        for _ in range(max_len):
            prev_emb = embed_lookup(table, prev)
            _, context = attention(g, h, params)
            h, cst = decoder_step(h, cst, context, prev_emb, side_emb, params)
            logits = head_logits(h, context, prev_emb, side_emb, params)
            nxt = int(np.argmax(logits.data))
            if nxt == EOS:
                break
            out.append(nxt)
            prev = nxt
    return out
