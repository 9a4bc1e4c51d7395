"""Manifest ingestion and curation: remapping, dedup, overlap-free splits, stats.

A manifest is a JSONL file, one record per line. Records tie an image to a
question-answer pair plus the answer category used for episode construction.
All curation ops are pure transforms Manifest -> Manifest with deterministic
output order.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources

from .errors import ValidationError
from .vocab import tokenize

log = logging.getLogger(__name__)

SOURCES = ("A", "B")

_RECORD_KEYS = {"image_id", "image_ref", "question", "answer",
                "answer_category", "question_category", "source"}


@dataclass(frozen=True)
class Record:
    image_id: str
    image_ref: str
    question: str
    answer: str
    answer_category: str
    question_category: str | None = None
    source: str = "A"

    def __post_init__(self):
        for name in ("image_id", "image_ref", "question", "answer", "answer_category"):
            if not getattr(self, name):
                raise ValidationError(f"record field '{name}' must be nonempty")
        if self.source not in SOURCES:
            raise ValidationError(f"record source must be one of {SOURCES}, got {self.source!r}")

    def key(self):
        return (self.image_id, self.question, self.answer)

    def to_json(self) -> str:
        d = {"image_id": self.image_id, "image_ref": self.image_ref,
             "question": self.question, "answer": self.answer,
             "answer_category": self.answer_category, "source": self.source}
        if self.question_category is not None:
            d["question_category"] = self.question_category
        return json.dumps(d, sort_keys=True)


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    duplicates_collapsed: int = 0

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def image_ids(self) -> set:
        return {r.image_id for r in self.records}

    def categories(self) -> set:
        return {r.answer_category for r in self.records}


def _record_from_dict(d: dict, where: str) -> Record:
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: record must be a JSON object")
    unknown = set(d) - _RECORD_KEYS
    if unknown:
        raise ValidationError(f"{where}: unknown record fields {sorted(unknown)}")
    try:
        return Record(**d)
    except (TypeError, ValidationError) as e:
        raise ValidationError(f"{where}: {e}") from e


def load_manifest(path) -> Manifest:
    """Parse a JSONL manifest.

    Exact duplicates (same image_id + question + answer) are collapsed, keeping
    the first occurrence; the collapse count is logged and stored on the
    manifest. Two records sharing an image_id but disagreeing on image_ref are
    an error: a manifest must name each image once.
    """
    records, seen, refs = [], set(), {}
    dups = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({e.msg})") from e
            rec = _record_from_dict(d, f"{path}:{lineno}")
            prev = refs.setdefault(rec.image_id, rec.image_ref)
            if prev != rec.image_ref:
                raise ValidationError(
                    f"{path}:{lineno}: image_id {rec.image_id!r} maps to both "
                    f"{prev!r} and {rec.image_ref!r}")
            if rec.key() in seen:
                dups += 1
                continue
            seen.add(rec.key())
            records.append(rec)
    if dups:
        log.warning("%s: collapsed %d duplicate record(s)", path, dups)
    return Manifest(records, duplicates_collapsed=dups)


def save_manifest(manifest: Manifest, path):
    with open(path, "w", encoding="utf-8") as f:
        for rec in manifest.records:
            f.write(rec.to_json() + "\n")


# -- recategorization ----------------------------------------------------------


_MATCH_KINDS = ("answer_has", "category_in", "always")


def _fold(token: str) -> str:
    # crude singular folding so "elephant" matches "elephants"; applied to
    # keywords and tokens alike, so it only has to be consistent, not correct
    t = token.lower()
    return t[:-1] if len(t) > 3 and t.endswith("s") else t


@dataclass(frozen=True)
class Rule:
    new_category: str
    kind: str
    arg: tuple = ()

    def matches(self, record: Record) -> bool:
        if self.kind == "always":
            return True
        if self.kind == "category_in":
            return record.answer_category in self.arg
        folded = {_fold(t) for t in tokenize(record.answer)}
        return any(_fold(k) in folded for k in self.arg)


class CategoryMap:
    """Ordered first-match-wins rewrite rules over answer tokens or category.

    The rule list must end in (or contain) an 'always' fallback so the map is
    total. Keyword predicates are curatorial: they encode how the corpus was
    cleaned, not a canonical definition of the categories.
    """

    def __init__(self, rules: list):
        if not rules:
            raise ValidationError("category map needs at least one rule")
        if not any(r.kind == "always" for r in rules):
            raise ValidationError("category map is not total: no fallback rule")
        self.rules = list(rules)

    @classmethod
    def from_json(cls, obj) -> "CategoryMap":
        if not isinstance(obj, list):
            raise ValidationError("category map JSON must be an ordered rule array")
        rules = []
        for i, d in enumerate(obj):
            if "new_category" not in d:
                raise ValidationError(f"rule {i}: missing new_category")
            kinds = [k for k in _MATCH_KINDS if k in d]
            if len(kinds) != 1:
                raise ValidationError(f"rule {i}: need exactly one of {_MATCH_KINDS}")
            kind = kinds[0]
            arg = () if kind == "always" else tuple(d[kind])
            if kind != "always" and not arg:
                raise ValidationError(f"rule {i}: empty {kind} list")
            rules.append(Rule(d["new_category"], kind, arg))
        return cls(rules)

    @classmethod
    def load(cls, path) -> "CategoryMap":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))

    def apply(self, record: Record) -> str:
        for rule in self.rules:
            if rule.matches(record):
                return rule.new_category
        raise AssertionError("unreachable: map validated as total")

    def codomain(self) -> set:
        return {r.new_category for r in self.rules}


def default_category_map() -> CategoryMap:
    text = resources.files("metaquill.data").joinpath("vqg23_category_map.json").read_text()
    return CategoryMap.from_json(json.loads(text))


def recategorize(manifest: Manifest, cmap: CategoryMap) -> Manifest:
    out = [replace(r, answer_category=cmap.apply(r)) for r in manifest.records]
    return Manifest(out)


# -- merge / split -------------------------------------------------------------


def merge_dedup(a: Manifest, b: Manifest, override: bool = False) -> Manifest:
    """Union of two manifests keyed by (image_id, question, answer).

    When an image_id appears in both sources under different image_refs, the
    merge is ambiguous; with override=True the ref from `a` wins and all QA
    pairs from both sides are kept under it.
    """
    refs = {}
    for rec in list(a.records) + list(b.records):
        prev = refs.setdefault(rec.image_id, rec.image_ref)
        if prev != rec.image_ref and not override:
            raise ValidationError(
                f"image_id {rec.image_id!r} has conflicting refs {prev!r} vs "
                f"{rec.image_ref!r}; pass override to keep the first")
    out, seen = [], set()
    for rec in list(a.records) + list(b.records):
        rec = replace(rec, image_ref=refs[rec.image_id])
        if rec.key() in seen:
            continue
        seen.add(rec.key())
        out.append(rec)
    return Manifest(out)


@dataclass(frozen=True)
class SplitSpec:
    train_categories: frozenset
    test_categories: frozenset

    def __post_init__(self):
        overlap = self.train_categories & self.test_categories
        if overlap:
            raise ValidationError(f"split spec categories overlap: {sorted(overlap)}")
        if not self.train_categories or not self.test_categories:
            raise ValidationError("split spec needs nonempty train and test category sets")

    @classmethod
    def from_json(cls, obj) -> "SplitSpec":
        try:
            return cls(frozenset(obj["train_categories"]), frozenset(obj["test_categories"]))
        except KeyError as e:
            raise ValidationError(f"split spec missing key {e}") from e

    @classmethod
    def load(cls, path) -> "SplitSpec":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def default_splitspec() -> SplitSpec:
    text = resources.files("metaquill.data").joinpath("vqg23_splitspec.json").read_text()
    return SplitSpec.from_json(json.loads(text))


def split(manifest: Manifest, spec: SplitSpec, report_out: dict | None = None):
    """Route records to (train, test) by category with disjoint image-id sets.

    An image whose records land on both sides goes wholly to the side holding
    the majority of its records (tie -> train); its minority-side records are
    dropped. Pass a dict as report_out to collect what was dropped.
    """
    covered = spec.train_categories | spec.test_categories
    missing = manifest.categories() - covered
    if missing:
        raise ValidationError(f"split spec does not cover categories: {sorted(missing)}")

    votes = {}  # image_id -> [train_count, test_count]
    for rec in manifest.records:
        v = votes.setdefault(rec.image_id, [0, 0])
        v[0 if rec.answer_category in spec.train_categories else 1] += 1
    side = {iid: ("train" if v[0] >= v[1] else "test") for iid, v in votes.items()}

    train, test, dropped = [], [], []
    for rec in manifest.records:
        rec_side = "train" if rec.answer_category in spec.train_categories else "test"
        if rec_side == side[rec.image_id]:
            (train if rec_side == "train" else test).append(rec)
        else:
            dropped.append(rec)
    if dropped:
        straddling = len({r.image_id for r in dropped})
        log.warning("split: dropped %d minority-side record(s) across %d straddling image(s)",
                    len(dropped), straddling)
    if report_out is not None:
        report_out["dropped_records"] = len(dropped)
        report_out["straddling_images"] = len({r.image_id for r in dropped})
        report_out["dropped"] = [r.key() for r in dropped]
    return Manifest(train), Manifest(test)


# -- statistics ----------------------------------------------------------------


def stats(manifest: Manifest) -> dict:
    """Per-category (images, questions) plus global unique counts.

    Images are unique image_ids per category; questions are records. An image
    whose records span categories counts once in each category's image tally.
    """
    per_images, per_questions = {}, Counter()
    for rec in manifest.records:
        per_images.setdefault(rec.answer_category, set()).add(rec.image_id)
        per_questions[rec.answer_category] += 1
    table = {cat: {"images": len(per_images[cat]), "questions": per_questions[cat]}
             for cat in sorted(per_questions)}
    return {
        "per_category": table,
        "global": {
            "records": len(manifest.records),
            "unique_images": len(manifest.image_ids()),
            "unique_questions": len({r.question for r in manifest.records}),
            "unique_answers": len({r.answer for r in manifest.records}),
            "unique_qa_pairs": len({(r.question, r.answer) for r in manifest.records}),
        },
    }


def variety_from_counts(unique_qa_pairs: int, unique_answers: int) -> float:
    """Question variety: unique QA pairs per unique answer."""
    if unique_answers <= 0:
        raise ValidationError("variety ratio undefined: zero unique answers")
    return unique_qa_pairs / unique_answers


def variety_ratio(manifest: Manifest) -> float:
    g = stats(manifest)["global"]
    return variety_from_counts(g["unique_qa_pairs"], g["unique_answers"])
