"""Command-line entry point orchestrating the pipeline.

Subcommands: curate, stats, gen-toyset, pretrain, meta-train, finetune-eval,
score. Training commands take a JSON run config; unknown keys are rejected and
the fully-resolved config (all defaults materialized) is echoed to stdout and
written next to the outputs, so a rerun from the echo reproduces the outputs
bit-identically. Exit codes: 0 success, 2 validation, 3 numeric failure, 4 io.
"""

import argparse
import json
import os
import sys

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff.tnsr_io import load_bundle, read_tensor, save_bundle
from .dataset import (
    CategoryMap,
    Manifest,
    SplitSpec,
    default_category_map,
    default_splitspec,
    load_manifest,
    merge_dedup,
    recategorize,
    save_manifest,
    split,
    stats,
)
from .errors import MetaquillError, NumericError, ValidationError
from .meta import MetaConfig, finetune_and_eval, meta_train, sample_episode
from .metrics import score_corpus
from .model import ModelConfig, features, generate, init_params, question_loss
from .selfsup import PretrainConfig, init_rotation_head, pretrain_joint, strip_rotation_head
from .toyset import ToySpec, generate_toyset, toyset_splitspec
from .vocab import BOS, EOS, UNK, Vocabulary, tokenize

REQUIRED = object()

MODEL_SCHEMA = {
    "mode": "scale_shift",
    "image_backend": "tiny_cnn",
    "use_category": True,
    "use_answer": False,
    "feat_c": 16,
    "d_c": 32,
    "d_a": 32,
    "d_h": 64,
    "d_att": 64,
    "d_p": 64,
    "d_w": 32,
    "trunk_width": 64,
    "cat_hidden": 32,
    "max_len": 20,
    "train_embeddings": True,
}

PRETRAIN_SCHEMA = {
    "seed": 0,
    "threads": None,
    "train_manifest": REQUIRED,
    "images_root": REQUIRED,
    "out_dir": REQUIRED,
    "init_run": None,
    "categories": None,
    "model": MODEL_SCHEMA,
    "pretrain": {
        "selfsup": True,
        "lam": 1.0,
        "lr": 0.01,
        "iters": 100,
        "batch_size": 8,
        "clip_norm": 10.0,
    },
}

META_TRAIN_SCHEMA = {
    "seed": 0,
    "threads": None,
    "train_manifest": REQUIRED,
    "images_root": REQUIRED,
    "out_dir": REQUIRED,
    "init_run": None,
    "categories": None,
    "model": MODEL_SCHEMA,
    "meta": {
        "inner_lr": 0.01,
        "outer_lr": 0.001,
        "adaptation_steps": 3,
        "meta_batch": 4,
        "first_order": False,
        "k": 3,
        "n": 5,
        "q": 5,
        "max_meta_iters": 100,
        "clip_norm": 10.0,
    },
}

FINETUNE_EVAL_SCHEMA = {
    "seed": 0,
    "threads": None,
    "run": REQUIRED,
    "eval_manifest": REQUIRED,
    "images_root": REQUIRED,
    "out_dir": REQUIRED,
    "eval": {
        "episodes": 10,
        "steps": 10,
        "inner_lr": 0.01,
        "k": 3,
        "n": 5,
        "q": 5,
    },
}


def resolve_config(user, schema, path="config"):
    """Overlay user values on schema defaults; reject unknown or missing keys."""
    if not isinstance(user, dict):
        raise ValidationError(f"{path}: expected an object, got {type(user).__name__}")
    unknown = sorted(set(user) - set(schema))
    if unknown:
        raise ValidationError(f"{path}: unknown keys {unknown}")
    out = {}
    for key, default in schema.items():
        if isinstance(default, dict):
            out[key] = resolve_config(user.get(key, {}), default, f"{path}.{key}")
        elif key in user:
            out[key] = user[key]
        elif default is REQUIRED:
            raise ValidationError(f"{path}: missing required key '{key}'")
        else:
            out[key] = default
    return out


def _read_json(path):
    with open(path, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: invalid JSON ({e})") from e


def _apply_threads(flag_value, config_value=None):
    """--threads beats the config key beats METAQUILL_THREADS; caps BLAS workers."""
    value = flag_value if flag_value is not None else config_value
    if value is None:
        value = os.environ.get("METAQUILL_THREADS")
    if value is None:
        return None
    threads = int(value)
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)
    return threads


def _echo(resolved: dict, out_dir=None):
    text = json.dumps(resolved, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "resolved_config.json"), "w", encoding="utf-8") as f:
            f.write(text + "\n")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# -- data plumbing shared by the training commands ----------------------------------


class TaskData:
    """Manifest records joined with their image tensors, vocabulary, and
    category ids. Images are loaded once up front; records keep their manifest
    order so everything downstream is deterministic."""

    def __init__(self, manifest, images_root, vocab: Vocabulary, categories):
        self.vocab = vocab
        self.categories = list(categories)
        self.cat_index = {c: i for i, c in enumerate(self.categories)}
        present = {r.answer_category for r in manifest}
        outside = sorted(present - set(self.categories))
        if outside:
            raise ValidationError(
                f"manifest categories outside the model's category set: {outside}")
        self.records = list(manifest)
        self.images = {}
        for rec in self.records:
            if rec.image_id not in self.images:
                self.images[rec.image_id] = read_tensor(
                    os.path.join(images_root, rec.image_ref))

    def image_fn(self, rec):
        return self.images[rec.image_id]


def build_vocab(manifest) -> Vocabulary:
    texts = [r.question for r in manifest] + [r.answer for r in manifest]
    return Vocabulary.from_texts(texts)


def example_fns(data: TaskData, cfg: ModelConfig):
    """loss_fn and generate_fn closing over the joined data; both take a Record."""

    def side(rec):
        cat = data.cat_index[rec.answer_category] if cfg.use_category else None
        ans = None
        if cfg.use_answer:
            ans = data.vocab.encode(tokenize(rec.answer)) or [UNK]
        return cat, ans

    def gold_ids(rec):
        content = data.vocab.encode(tokenize(rec.question))[: cfg.max_len - 2]
        return [BOS] + content + [EOS]

    def loss_fn(params, rec):
        cat, ans = side(rec)
        return question_loss(params, cfg, data.images[rec.image_id], cat, ans,
                             gold_ids(rec))

    def generate_fn(params, rec):
        cat, ans = side(rec)
        hyp = generate(params, cfg, data.images[rec.image_id], cat, ans)
        return hyp, gold_ids(rec)[1:-1]

    return loss_fn, generate_fn


def save_run(out_dir, params: dict, vocab: Vocabulary, model_section: dict,
             categories, step: int, seed: int):
    meta = {"step": step, "seed": seed, "model": model_section,
            "categories": list(categories)}
    save_bundle(os.path.join(out_dir, "checkpoint"),
                {n: p.data for n, p in params.items()}, meta=meta)
    vocab.save(os.path.join(out_dir, "vocab.txt"))


def load_run(run_dir):
    """Read back a run directory written by pretrain or meta-train."""
    arrays, manifest = load_bundle(os.path.join(run_dir, "checkpoint"))
    vocab_path = os.path.join(run_dir, "vocab.txt")
    if not os.path.exists(vocab_path):
        raise ValidationError(f"{run_dir}: missing vocab.txt")
    vocab = Vocabulary.load(vocab_path)
    model_section = manifest.get("model")
    categories = manifest.get("categories")
    if model_section is None or categories is None:
        raise ValidationError(f"{run_dir}: checkpoint lacks model/categories metadata")
    params = {n: Tensor(a, requires_grad=True) for n, a in arrays.items()}
    params["emb.E"].requires_grad = bool(model_section.get("train_embeddings", True))
    return params, vocab, model_section, categories, manifest


def _check_init_run_matches(resolved, model_section, categories):
    if resolved["model"] != model_section:
        raise ValidationError(
            "config model section does not match the init run's stored model; "
            "copy the model section from the run's resolved_config.json")
    if resolved["categories"] not in (None, list(categories)):
        raise ValidationError(
            f"config categories {resolved['categories']} do not match the init "
            f"run's {list(categories)}")


def _resolve_categories(resolved, manifest):
    if resolved["categories"] is not None:
        return list(resolved["categories"])
    return sorted({r.answer_category for r in manifest})


# -- subcommands ---------------------------------------------------------------------


def cmd_curate(args) -> int:
    resolved = {
        "command": "curate",
        "inputs": list(args.input),
        "category_map": args.category_map,
        "splitspec": args.splitspec,
        "override": bool(args.override),
        "out_dir": args.out_dir,
        "threads": _apply_threads(args.threads),
    }
    _echo(resolved, args.out_dir)
    manifest = load_manifest(args.input[0])
    for path in args.input[1:]:
        manifest = merge_dedup(manifest, load_manifest(path), override=args.override)
    if args.category_map is not None:
        cmap = (default_category_map() if args.category_map == "default"
                else CategoryMap.load(args.category_map))
        manifest = recategorize(manifest, cmap)
    save_manifest(manifest, os.path.join(args.out_dir, "curated.jsonl"))
    if args.splitspec is not None:
        spec = (default_splitspec() if args.splitspec == "default"
                else SplitSpec.load(args.splitspec))
        report: dict = {}
        train, test = split(manifest, spec, report_out=report)
        save_manifest(train, os.path.join(args.out_dir, "train.jsonl"))
        save_manifest(test, os.path.join(args.out_dir, "test.jsonl"))
        _write_json(os.path.join(args.out_dir, "split_report.json"), report)
    return 0


def cmd_stats(args) -> int:
    resolved = {"command": "stats", "manifest": args.manifest, "out": args.out,
                "threads": _apply_threads(args.threads)}
    _echo(resolved)
    _write_json(args.out, stats(load_manifest(args.manifest)))
    return 0


def cmd_gen_toyset(args) -> int:
    resolved = {
        "command": "gen-toyset",
        "n_categories": args.n_categories,
        "images_per_cat": args.images_per_cat,
        "grid": args.grid,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "threads": _apply_threads(args.threads),
    }
    _echo(resolved, args.out_dir)
    spec = ToySpec(n_categories=args.n_categories, images_per_cat=args.images_per_cat,
                   grid=args.grid, seed=args.seed)
    generate_toyset(spec, args.out_dir)
    split_spec = toyset_splitspec(args.n_categories)
    _write_json(os.path.join(args.out_dir, "splitspec.json"),
                {"train_categories": sorted(split_spec.train_categories),
                 "test_categories": sorted(split_spec.test_categories)})
    return 0


def _guard_finite(value: float, where: str):
    if not np.isfinite(value):
        raise NumericError(f"{where}: non-finite loss")


def cmd_pretrain(args) -> int:
    resolved = resolve_config(_read_json(args.config), PRETRAIN_SCHEMA)
    resolved["threads"] = _apply_threads(args.threads, resolved["threads"])
    _echo(resolved, resolved["out_dir"])
    seed = int(resolved["seed"])
    manifest = load_manifest(resolved["train_manifest"])

    prior_step = 0
    if resolved["init_run"] is not None:
        params, vocab, model_section, categories, run_meta = load_run(resolved["init_run"])
        _check_init_run_matches(resolved, model_section, categories)
        prior_step = int(run_meta.get("step", 0))
    else:
        vocab = build_vocab(manifest)
        categories = _resolve_categories(resolved, manifest)
        model_section = resolved["model"]
        params = None

    cfg = ModelConfig(vocab_size=len(vocab), n_categories=len(categories),
                      **model_section)
    if params is None:
        params = init_params(cfg, np.random.default_rng(seed))

    pt = resolved["pretrain"]
    lam = float(pt["lam"]) if pt["selfsup"] else 0.0
    if lam > 0 and cfg.image_backend != "tiny_cnn":
        raise ValidationError("rotation pretraining needs the trainable image encoder "
                              "(model.image_backend must be tiny_cnn)")
    data = TaskData(manifest, resolved["images_root"], vocab, categories)
    if lam > 0 and "rot.conv.w" not in params:
        with no_grad():
            fmap = features(params, cfg, data.images[data.records[0].image_id])
        params.update(init_rotation_head(np.random.default_rng([seed, 1]), cfg.feat_c,
                                         fmap.shape[0], fmap.shape[1]))

    loss_fn, _ = example_fns(data, cfg)
    pc = PretrainConfig(lr=float(pt["lr"]), iters=int(pt["iters"]),
                        batch_size=int(pt["batch_size"]), lam=lam, seed=seed,
                        clip_norm=pt["clip_norm"])
    out_dir = resolved["out_dir"]
    params, log = pretrain_joint(params, data.records, loss_fn, data.image_fn, pc,
                                 log_path=os.path.join(out_dir, "pretrain_log.jsonl"))
    for entry in log:
        _guard_finite(entry["vqg_loss"], f"pretrain iter {entry['iter']}")
    save_run(out_dir, params, vocab, model_section, categories,
             step=prior_step + pc.iters, seed=seed)
    return 0


def cmd_meta_train(args) -> int:
    resolved = resolve_config(_read_json(args.config), META_TRAIN_SCHEMA)
    resolved["threads"] = _apply_threads(args.threads, resolved["threads"])
    _echo(resolved, resolved["out_dir"])
    seed = int(resolved["seed"])
    manifest = load_manifest(resolved["train_manifest"])

    if resolved["init_run"] is not None:
        params, vocab, model_section, categories, _ = load_run(resolved["init_run"])
        _check_init_run_matches(resolved, model_section, categories)
        if any(n.startswith("rot.") for n in params):
            params = strip_rotation_head(params)
    else:
        vocab = build_vocab(manifest)
        categories = _resolve_categories(resolved, manifest)
        model_section = resolved["model"]
        params = None

    cfg = ModelConfig(vocab_size=len(vocab), n_categories=len(categories),
                      **model_section)
    if params is None:
        params = init_params(cfg, np.random.default_rng(seed))

    data = TaskData(manifest, resolved["images_root"], vocab, categories)
    loss_fn, _ = example_fns(data, cfg)
    meta_cfg = MetaConfig(seed=seed, **resolved["meta"])
    train_categories = {r.answer_category for r in data.records}

    def sample_fn(rng, task_id):
        return sample_episode(data.records, train_categories, meta_cfg, rng, task_id)

    out_dir = resolved["out_dir"]
    params, log = meta_train(
        params, sample_fn, loss_fn, meta_cfg,
        log_path=os.path.join(out_dir, "train_log.jsonl"),
        checkpoint_dir=os.path.join(out_dir, "checkpoint"),
        checkpoint_meta={"model": model_section, "categories": list(categories)})
    for entry in log:
        _guard_finite(entry["mean_query_loss"], f"meta iter {entry['iter']}")
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    return 0


def _x100(metrics: dict) -> dict:
    return {k: round(100.0 * v, 2) for k, v in metrics.items()}


def cmd_finetune_eval(args) -> int:
    resolved = resolve_config(_read_json(args.config), FINETUNE_EVAL_SCHEMA)
    resolved["threads"] = _apply_threads(args.threads, resolved["threads"])
    _echo(resolved, resolved["out_dir"])
    seed = int(resolved["seed"])
    ev = resolved["eval"]
    if ev["steps"] > 0 and ev["inner_lr"] <= 0:
        raise ValidationError("eval.inner_lr must be positive when eval.steps > 0")

    params, vocab, model_section, categories, _ = load_run(resolved["run"])
    if any(n.startswith("rot.") for n in params):
        params = strip_rotation_head(params)
    cfg = ModelConfig(vocab_size=len(vocab), n_categories=len(categories),
                      **model_section)
    manifest = load_manifest(resolved["eval_manifest"])
    data = TaskData(manifest, resolved["images_root"], vocab, categories)
    loss_fn, generate_fn = example_fns(data, cfg)

    sample_cfg = MetaConfig(k=int(ev["k"]), n=int(ev["n"]), q=int(ev["q"]))
    eval_categories = {r.answer_category for r in data.records}
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(int(ev["episodes"])):
        episode = sample_episode(data.records, eval_categories, sample_cfg, rng,
                                 task_id=i)
        metrics = finetune_and_eval(params, episode, loss_fn, generate_fn,
                                    steps=int(ev["steps"]),
                                    inner_lr=float(ev["inner_lr"]))
        rows.append({"task_id": i, "categories": list(episode.categories),
                     "metrics": metrics, "metrics_x100": _x100(metrics)})
    mean = {k: float(np.mean([r["metrics"][k] for r in rows]))
            for k in rows[0]["metrics"]}
    out = {"seed": seed, "episodes": rows, "mean_metrics": mean,
           "mean_metrics_x100": _x100(mean), "config": resolved}
    _write_json(os.path.join(resolved["out_dir"], "scores.json"), out)
    return 0


def cmd_score(args) -> int:
    resolved = {"command": "score", "predictions": args.predictions, "out": args.out,
                "threads": _apply_threads(args.threads)}
    _echo(resolved)
    corpus = []
    with open(args.predictions, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{args.predictions}:{lineno}: invalid JSON ({e})")
            unknown = sorted(set(row) - {"hypothesis", "references"})
            if unknown or "hypothesis" not in row or "references" not in row:
                raise ValidationError(
                    f"{args.predictions}:{lineno}: each line needs exactly "
                    f"'hypothesis' and 'references'")
            refs = row["references"]
            if not isinstance(refs, list) or not refs:
                raise ValidationError(
                    f"{args.predictions}:{lineno}: references must be a nonempty list")
            corpus.append((tokenize(str(row["hypothesis"])),
                           [tokenize(str(r)) for r in refs]))
    if not corpus:
        raise ValidationError(f"{args.predictions}: no prediction rows")
    metrics = score_corpus(corpus)
    _write_json(args.out, {"n_items": len(corpus), "metrics": metrics,
                           "metrics_x100": _x100(metrics)})
    return 0


# -- argument parsing ------------------------------------------------------------------


def _add_threads(sub):
    sub.add_argument("--threads", type=int, default=None,
                     help="cap worker threads (default: METAQUILL_THREADS or unlimited)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaquill",
                                     description="few-shot question generation pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("curate", help="merge, dedup, recategorize, and split manifests")
    p.add_argument("--input", action="append", required=True,
                   help="manifest JSONL; repeat to merge several")
    p.add_argument("--category-map", default=None,
                   help="rules JSON, or 'default' for the built-in 23-category map")
    p.add_argument("--splitspec", default=None,
                   help="split JSON, or 'default' for the built-in category split")
    p.add_argument("--override", action="store_true",
                   help="let earlier inputs win image_ref conflicts")
    p.add_argument("--out-dir", required=True)
    _add_threads(p)
    p.set_defaults(fn=cmd_curate)

    p = subs.add_parser("stats", help="per-category and global counts for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_threads(p)
    p.set_defaults(fn=cmd_stats)

    p = subs.add_parser("gen-toyset", help="render the synthetic shapes corpus")
    p.add_argument("--n-categories", type=int, default=4)
    p.add_argument("--images-per-cat", type=int, default=50)
    p.add_argument("--grid", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    _add_threads(p)
    p.set_defaults(fn=cmd_gen_toyset)

    for name, fn in (("pretrain", cmd_pretrain), ("meta-train", cmd_meta_train),
                     ("finetune-eval", cmd_finetune_eval)):
        p = subs.add_parser(name)
        p.add_argument("--config", required=True, help="run config JSON")
        _add_threads(p)
        p.set_defaults(fn=fn)

    p = subs.add_parser("score", help="corpus metrics over a predictions JSONL")
    p.add_argument("--predictions", required=True,
                   help="JSONL of {hypothesis, references} rows")
    p.add_argument("--out", required=True)
    _add_threads(p)
    p.set_defaults(fn=cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
