"""Episodic sampling and the bi-level meta-optimizer.

The machinery is generic over the task: a loss_fn(params, example) -> scalar
Tensor defines the objective, so the same inner/outer loops drive the full
question model and the closed-form toy problems used to pin down the math.

Full second-order mode keeps the inner update chain differentiable and
backpropagates the query loss through it; first-order mode uses detached inner
gradients, making the adapted parameters an identity function of the originals
as far as the outer gradient is concerned. Both share one code path. Memory
stays bounded by processing one episode's graph at a time and accumulating
meta-gradients incrementally.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, concat, reshape, scale, sub, tensor_mean
from .autodiff.tnsr_io import save_bundle
from .errors import ValidationError
from .metrics import score_corpus


@dataclass(frozen=True)
class Episode:
    categories: tuple
    support: tuple
    query: tuple
    task_id: int = 0


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 0.01
    outer_lr: float = 0.001
    adaptation_steps: int = 3
    meta_batch: int = 4
    first_order: bool = False
    k: int = 3
    n: int = 5
    q: int = 5
    seed: int = 0
    max_meta_iters: int = 100
    clip_norm: float | None = 10.0

    def __post_init__(self):
        if self.inner_lr <= 0 or self.outer_lr <= 0:
            raise ValidationError("learning rates must be positive")
        if self.adaptation_steps < 0:
            raise ValidationError("adaptation_steps must be >= 0")
        if min(self.k, self.n, self.q, self.meta_batch) < 1:
            raise ValidationError("k, n, q, and meta_batch must all be >= 1")


# -- episode sampling -------------------------------------------------------------


def sample_episode(manifest, categories, cfg: MetaConfig, rng: np.random.Generator,
                   task_id: int = 0) -> Episode:
    """K categories uniformly without replacement, then N support + Q query
    records per category drawn over distinct image ids, so no image appears on
    both sides of the episode."""
    by_cat = {}
    for rec in manifest:
        if rec.answer_category in categories:
            by_cat.setdefault(rec.answer_category, {}).setdefault(rec.image_id, []).append(rec)
    need = cfg.n + cfg.q
    eligible = sorted(c for c, imgs in by_cat.items() if len(imgs) >= need)
    if len(eligible) < cfg.k:
        small = sorted(set(categories) - set(eligible))
        raise ValidationError(
            f"need {cfg.k} categories with at least {need} distinct images each; "
            f"only {len(eligible)} eligible (too small or absent: {small})")
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=cfg.k, replace=False)]

    support, query = [], []
    for cat in chosen:
        imgs = sorted(by_cat[cat])
        pick = rng.choice(len(imgs), size=need, replace=False)
        for slot, idx in enumerate(pick):
            recs = by_cat[cat][imgs[idx]]
            rec = recs[rng.integers(len(recs))]
            (support if slot < cfg.n else query).append(rec)
    return Episode(tuple(chosen), tuple(support), tuple(query), task_id)


# -- inner loop -------------------------------------------------------------------


def _mean_loss(params, examples, loss_fn) -> Tensor:
    losses = [reshape(loss_fn(params, ex), (1,)) for ex in examples]
    return tensor_mean(concat(losses, axis=0))


def _trainable(params: dict):
    return [name for name, p in params.items() if p.requires_grad]


def inner_adapt(params: dict, support, loss_fn, cfg: MetaConfig) -> dict:
    """S plain gradient steps on the mean support loss.

    With first_order=False the returned tensors stay connected to the originals
    through a differentiable update chain; with first_order=True the inner
    gradients are detached constants, so the chain has identity Jacobian.
    """
    names = _trainable(params)
    for _ in range(cfg.adaptation_steps):
        loss = _mean_loss(params, support, loss_fn)
        grads = backward(loss, wrt=[params[n] for n in names],
                         create_graph=not cfg.first_order)
        updated = dict(params)
        for n in names:
            updated[n] = sub(params[n], scale(grads[params[n]], cfg.inner_lr))
        params = updated
    return params


def meta_gradient(params: dict, episodes, loss_fn, cfg: MetaConfig):
    """Gradient w.r.t. params of the sum over episodes of mean query loss at
    the adapted parameters. Returns (grad map name -> ndarray, mean query loss)."""
    if not episodes:
        raise ValidationError("meta_gradient needs at least one episode")
    names = _trainable(params)
    total = {n: np.zeros(params[n].shape, dtype=np.float64) for n in names}
    qlosses = []
    for ep in episodes:
        adapted = inner_adapt(params, ep.support, loss_fn, cfg)
        qloss = _mean_loss(adapted, ep.query, loss_fn)
        grads = backward(qloss, wrt=[params[n] for n in names])
        for n in names:
            total[n] += grads[params[n]].data.astype(np.float64)
        qlosses.append(qloss.item())
    grad_map = {n: g.astype(np.float32) for n, g in total.items()}
    return grad_map, float(np.mean(qlosses))


def clip_grad_norm(grad_map: dict, max_norm: float):
    """Global-norm clipping; returns (possibly scaled map, pre-clip norm)."""
    sq = sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grad_map.values())
    norm = float(np.sqrt(sq))
    if max_norm is not None and norm > max_norm and norm > 0:
        f = max_norm / norm
        grad_map = {n: (g * f).astype(np.float32) for n, g in grad_map.items()}
    return grad_map, norm


# -- outer loop -------------------------------------------------------------------


def meta_train(params: dict, sample_fn, loss_fn, cfg: MetaConfig,
               log_path=None, checkpoint_dir=None, checkpoint_meta=None,
               callback=None):
    """Outer loop: repeat {sample meta_batch episodes, meta-gradient, SGD step}.

    sample_fn(rng, task_id) -> Episode. Returns (params, log entries). Writes
    JSONL log lines and a final TNSR checkpoint bundle when paths are given.
    """
    rng = np.random.default_rng(cfg.seed)
    log, log_file = [], None
    if log_path is not None:
        log_file = open(log_path, "w", encoding="utf-8")
    try:
        task_id = 0
        for it in range(cfg.max_meta_iters):
            t0 = time.perf_counter()
            episodes = []
            for _ in range(cfg.meta_batch):
                episodes.append(sample_fn(rng, task_id))
                task_id += 1
            grad_map, mean_q = meta_gradient(params, episodes, loss_fn, cfg)
            grad_map, _ = clip_grad_norm(grad_map, cfg.clip_norm)
            params = {n: (Tensor(p.data - cfg.outer_lr * grad_map[n], requires_grad=True)
                          if n in grad_map else p)
                      for n, p in params.items()}
            entry = {"iter": it, "mean_query_loss": mean_q,
                     "wallclock_ms": (time.perf_counter() - t0) * 1000.0}
            log.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
            if callback is not None:
                callback(it, params, mean_q)
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_dir is not None:
        meta = {"step": cfg.max_meta_iters, "seed": cfg.seed}
        meta.update(checkpoint_meta or {})
        save_bundle(checkpoint_dir, {n: p.data for n, p in params.items()}, meta=meta)
    return params, log


# -- few-shot evaluation ------------------------------------------------------------


def finetune_and_eval(params: dict, episode: Episode, loss_fn, generate_fn,
                      steps: int, inner_lr: float) -> dict:
    """Adapt on the episode's support, then greedy-decode and score the queries.

    generate_fn(params, example) -> (hypothesis tokens, reference tokens).
    Returns the four corpus metrics (cider is 0.0 for a single-query episode).
    """
    if not episode.query:
        raise ValidationError("episode has an empty query set")
    if steps > 0:
        cfg = MetaConfig(inner_lr=inner_lr, adaptation_steps=steps, first_order=True)
        adapted = inner_adapt(params, episode.support, loss_fn, cfg)
    else:
        adapted = params
    adapted = {n: Tensor(p.data, requires_grad=p.requires_grad) for n, p in adapted.items()}
    corpus = []
    for ex in episode.query:
        hyp, ref = generate_fn(adapted, ex)
        # an immediate end-of-sequence leaves no tokens; score it as a
        # guaranteed miss rather than rejecting the corpus
        corpus.append((list(hyp) or ["<empty>"], [list(ref)]))
    return score_corpus(corpus)
