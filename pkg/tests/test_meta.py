import json

import numpy as np
import pytest

from metaquill.autodiff import Tensor, mul, sub
from metaquill.autodiff.tnsr_io import load_bundle
from metaquill.dataset import Record
from metaquill.errors import ValidationError
from metaquill.meta import (
    Episode,
    MetaConfig,
    clip_grad_norm,
    finetune_and_eval,
    inner_adapt,
    meta_gradient,
    meta_train,
    sample_episode,
)


def quad_loss(params, target):
    d = sub(params["theta"], Tensor(np.float32(target)))
    return mul(d, d)


def quad_setup():
    theta = Tensor(np.float32(0.0), requires_grad=True)
    return {"theta": theta}, Episode(("t",), (1.0,), (1.0,))


# -- bi-level math on a closed-form problem -------------------------------------


def test_inner_adapt_one_quadratic_step():
    params, ep = quad_setup()
    cfg = MetaConfig(inner_lr=0.25, adaptation_steps=1, meta_batch=1)
    adapted = inner_adapt(params, ep.support, quad_loss, cfg)
    # theta' = 0 - 0.25 * 2 * (0 - 1) = 0.5
    assert abs(adapted["theta"].item() - 0.5) <= 1e-9
    assert abs(params["theta"].item()) == 0  # originals untouched


def test_full_meta_gradient_differentiates_through_update():
    params, ep = quad_setup()
    cfg = MetaConfig(inner_lr=0.25, adaptation_steps=1, meta_batch=1)
    grad, mean_q = meta_gradient(params, [ep], quad_loss, cfg)
    # d/dtheta (theta' - 1)^2 with theta' = theta(1 - 2a) + 2a:
    # 2 (theta' - 1) (1 - 2a) = 2 (-0.5) (0.5) = -0.5
    assert abs(float(grad["theta"]) - (-0.5)) <= 1e-9
    assert abs(mean_q - 0.25) <= 1e-9


def test_first_order_drops_the_jacobian_factor():
    params, ep = quad_setup()
    cfg = MetaConfig(inner_lr=0.25, adaptation_steps=1, meta_batch=1, first_order=True)
    grad, _ = meta_gradient(params, [ep], quad_loss, cfg)
    # 2 (theta' - 1) = -1.0
    assert abs(float(grad["theta"]) - (-1.0)) <= 1e-9


def test_zero_adaptation_steps_collapse_to_plain_gradient():
    for fo in (False, True):
        params, ep = quad_setup()
        cfg = MetaConfig(inner_lr=0.25, adaptation_steps=0, meta_batch=1, first_order=fo)
        grad, _ = meta_gradient(params, [ep], quad_loss, cfg)
        assert abs(float(grad["theta"]) - (-2.0)) <= 1e-9


def test_small_inner_lr_approaches_the_collapse():
    gaps = []
    for lr in (1e-2, 1e-3, 1e-4):
        params, ep = quad_setup()
        cfg = MetaConfig(inner_lr=lr, adaptation_steps=1, meta_batch=1)
        grad, _ = meta_gradient(params, [ep], quad_loss, cfg)
        gaps.append(abs(float(grad["theta"]) - (-2.0)))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-2


def test_meta_gradient_sums_over_episodes():
    params, ep = quad_setup()
    cfg = MetaConfig(inner_lr=0.25, adaptation_steps=1, meta_batch=1)
    grad, mean_q = meta_gradient(params, [ep, ep], quad_loss, cfg)
    assert abs(float(grad["theta"]) - (-1.0)) <= 1e-9
    assert abs(mean_q - 0.25) <= 1e-9
    with pytest.raises(ValidationError):
        meta_gradient(params, [], quad_loss, cfg)


def linear_loss(params, example):
    x, y = example
    pred = sub(params["w"] @ Tensor(x), Tensor(y))
    extra = sub(pred + params["b"], Tensor(np.zeros(4, np.float32)))
    return (extra * extra).sum()


def test_full_meta_gradient_matches_directional_fd():
    rng = np.random.default_rng(0)
    w0 = rng.standard_normal((4, 4)).astype(np.float32) * 0.3
    b0 = rng.standard_normal(4).astype(np.float32) * 0.3
    support = [(rng.standard_normal(4).astype(np.float32),
                rng.standard_normal(4).astype(np.float32)) for _ in range(3)]
    query = [(rng.standard_normal(4).astype(np.float32),
              rng.standard_normal(4).astype(np.float32)) for _ in range(2)]
    ep = Episode(("t",), tuple(support), tuple(query))
    cfg = MetaConfig(inner_lr=0.05, adaptation_steps=2, meta_batch=1)

    def meta_objective(wv, bv):
        p = {"w": Tensor(wv, requires_grad=True), "b": Tensor(bv, requires_grad=True)}
        _, q = meta_gradient(p, [ep], linear_loss, cfg)
        return q

    params = {"w": Tensor(w0.copy(), requires_grad=True),
              "b": Tensor(b0.copy(), requires_grad=True)}
    grad, _ = meta_gradient(params, [ep], linear_loss, cfg)

    vw = rng.standard_normal((4, 4)).astype(np.float32)
    vb = rng.standard_normal(4).astype(np.float32)
    vw /= np.linalg.norm(vw)
    vb /= np.linalg.norm(vb)
    eps = 1e-2
    fd = (meta_objective(w0 + eps * vw, b0 + eps * vb)
          - meta_objective(w0 - eps * vw, b0 - eps * vb)) / (2 * eps)
    analytic = float(np.sum(grad["w"].astype(np.float64) * vw)
                     + np.sum(grad["b"].astype(np.float64) * vb))
    assert abs(analytic - fd) / max(1.0, abs(fd)) <= 2e-2


def test_clip_grad_norm():
    gm = {"a": np.array([3.0, 0.0], np.float32), "b": np.array([4.0], np.float32)}
    clipped, norm = clip_grad_norm(gm, 2.5)
    assert abs(norm - 5.0) <= 1e-7
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in clipped.values()))
    assert abs(total - 2.5) <= 1e-5
    same, norm2 = clip_grad_norm(gm, 100.0)
    assert norm2 == norm and same is gm or all(
        np.array_equal(same[k], gm[k]) for k in gm)


# -- episode sampling -------------------------------------------------------------


def toy_manifest(per_cat=20, cats=("a", "b", "c", "d"), records_per_image=1):
    recs = []
    for cat in cats:
        for i in range(per_cat):
            for r in range(records_per_image):
                recs.append(Record(image_id=f"{cat}_{i}", image_ref=f"{cat}_{i}.tnsr",
                                   question=f"why {cat} {i} {r}", answer=cat,
                                   answer_category=cat))
    return recs


def test_sample_episode_counts_and_disjointness():
    recs = toy_manifest()
    cfg = MetaConfig(k=2, n=3, q=4)
    ep = sample_episode(recs, {"a", "b", "c", "d"}, cfg, np.random.default_rng(0))
    assert len(ep.categories) == 2 and len(set(ep.categories)) == 2
    assert set(ep.categories) <= {"a", "b", "c", "d"}
    assert len(ep.support) == 2 * 3 and len(ep.query) == 2 * 4
    assert {r.answer_category for r in ep.support + ep.query} == set(ep.categories)
    support_imgs = {r.image_id for r in ep.support}
    query_imgs = {r.image_id for r in ep.query}
    assert not support_imgs & query_imgs


def test_sample_episode_deterministic_under_seed():
    recs = toy_manifest()
    cfg = MetaConfig(k=2, n=2, q=2)
    e1 = sample_episode(recs, {"a", "b", "c", "d"}, cfg, np.random.default_rng(42), task_id=7)
    e2 = sample_episode(recs, {"a", "b", "c", "d"}, cfg, np.random.default_rng(42), task_id=7)
    assert e1 == e2
    assert e1.task_id == 7


def test_sample_episode_eligibility_counts_distinct_images():
    # many records but too few distinct images make a category ineligible
    recs = toy_manifest(per_cat=3, cats=("small",), records_per_image=10)
    recs += toy_manifest(per_cat=10, cats=("big",))
    cfg = MetaConfig(k=2, n=2, q=2)
    with pytest.raises(ValidationError, match="small"):
        sample_episode(recs, {"small", "big"}, cfg, np.random.default_rng(0))


def test_sample_episode_category_frequencies():
    recs = toy_manifest()
    cfg = MetaConfig(k=2, n=2, q=2)
    rng = np.random.default_rng(1)
    counts = {c: 0 for c in "abcd"}
    draws = 400
    for _ in range(draws):
        for c in sample_episode(recs, set("abcd"), cfg, rng).categories:
            counts[c] += 1
    # each category appears in a draw with p = 1/2: mean 200, sigma = 10
    for c, n in counts.items():
        assert 170 <= n <= 230, counts


def test_sample_episode_varies_record_within_image():
    recs = toy_manifest(per_cat=4, cats=("a",), records_per_image=3)
    cfg = MetaConfig(k=1, n=2, q=2)
    rng = np.random.default_rng(2)
    seen = set()
    for _ in range(60):
        ep = sample_episode(recs, {"a"}, cfg, rng)
        seen.update(r.question for r in ep.support + ep.query)
    assert len(seen) > 4  # more than one record per image gets exercised


# -- outer loop --------------------------------------------------------------------


def fixed_episode_fn(ep):
    def fn(rng, task_id):
        return ep
    return fn


def test_meta_train_descends_and_logs(tmp_path):
    params, ep = quad_setup()
    cfg = MetaConfig(inner_lr=0.25, outer_lr=0.2, adaptation_steps=1, meta_batch=2,
                     max_meta_iters=20, seed=3)
    log_path = tmp_path / "train.jsonl"
    out, log = meta_train(params, fixed_episode_fn(ep), quad_loss, cfg, log_path=log_path)
    assert len(log) == 20
    assert log[-1]["mean_query_loss"] < log[0]["mean_query_loss"]
    assert set(log[0]) == {"iter", "mean_query_loss", "wallclock_ms"}
    lines = [json.loads(l) for l in log_path.read_text().splitlines()]
    assert lines == [
        {k: pytest.approx(v) if isinstance(v, float) else v for k, v in e.items()}
        for e in log]
    # theta' = theta(1-2a)+2a = 0.5(theta+1); query optimum at theta'=1 means theta -> 1
    assert abs(out["theta"].item() - 1.0) < 0.2


def test_meta_train_checkpoint_round_trip(tmp_path):
    params, ep = quad_setup()
    cfg = MetaConfig(inner_lr=0.25, outer_lr=0.1, adaptation_steps=1, meta_batch=1,
                     max_meta_iters=4, seed=5)
    ck = tmp_path / "ck"
    out, _ = meta_train(params, fixed_episode_fn(ep), quad_loss, cfg,
                        checkpoint_dir=ck, checkpoint_meta={"config": "quad"})
    arrays, manifest = load_bundle(ck)
    assert np.array_equal(arrays["theta"], out["theta"].data)
    assert manifest["step"] == 4 and manifest["seed"] == 5
    assert manifest["config"] == "quad"

    # resuming from the checkpoint matches training straight through
    params2, _ = quad_setup()
    straight, _ = meta_train(params2, fixed_episode_fn(ep), quad_loss,
                             MetaConfig(inner_lr=0.25, outer_lr=0.1, adaptation_steps=1,
                                        meta_batch=1, max_meta_iters=8, seed=5))
    resumed = {n: Tensor(a, requires_grad=True) for n, a in arrays.items()}
    resumed, _ = meta_train(resumed, fixed_episode_fn(ep), quad_loss,
                            MetaConfig(inner_lr=0.25, outer_lr=0.1, adaptation_steps=1,
                                       meta_batch=1, max_meta_iters=4, seed=5))
    assert np.array_equal(resumed["theta"].data, straight["theta"].data)


def test_meta_config_validation():
    with pytest.raises(ValidationError):
        MetaConfig(inner_lr=0.0)
    with pytest.raises(ValidationError):
        MetaConfig(adaptation_steps=-1)
    with pytest.raises(ValidationError):
        MetaConfig(k=0)


# -- few-shot evaluation -------------------------------------------------------------


def threshold_generate(params, example):
    hyp = ["what", "is", "it"] if params["theta"].item() > 0.4 else ["nope"]
    return hyp, ["what", "is", "it"]


def test_finetune_and_eval_adapts_on_support():
    params, ep = quad_setup()
    ep = Episode(("t",), (1.0, 1.0), (1.0, 1.0))
    scores = finetune_and_eval(params, ep, quad_loss, threshold_generate,
                               steps=3, inner_lr=0.25)
    assert set(scores) == {"bleu4", "meteor_s", "rougeL", "cider"}
    assert scores["bleu4"] == 1.0 and scores["rougeL"] == 1.0
    assert params["theta"].item() == 0.0  # originals untouched


def test_finetune_and_eval_steps_zero_uses_params_as_is():
    params, _ = quad_setup()
    ep = Episode(("t",), (1.0,), (1.0, 1.0))
    scores = finetune_and_eval(params, ep, quad_loss, threshold_generate,
                               steps=0, inner_lr=0.25)
    assert scores["bleu4"] == 0.0


def test_finetune_and_eval_scores_empty_generation_as_miss():
    def empty_generate(params, example):
        return [], ["what", "is", "it"]

    params, _ = quad_setup()
    ep = Episode(("t",), (1.0,), (1.0, 1.0))
    scores = finetune_and_eval(params, ep, quad_loss, empty_generate,
                               steps=1, inner_lr=0.25)
    assert scores["bleu4"] == 0.0 and scores["rougeL"] == 0.0


def test_finetune_and_eval_single_query_cider_zero():
    params, _ = quad_setup()
    ep = Episode(("t",), (1.0,), (1.0,))
    scores = finetune_and_eval(params, ep, quad_loss, threshold_generate,
                               steps=1, inner_lr=0.25)
    assert scores["cider"] == 0.0
    with pytest.raises(ValidationError):
        finetune_and_eval(params, Episode(("t",), (1.0,), ()), quad_loss,
                          threshold_generate, steps=1, inner_lr=0.25)
