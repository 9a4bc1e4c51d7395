"""Synthetic desk-scale corpus: colored shapes on plain backgrounds.

Each image is 3x32x32 with a white two-row strip at the top (an orientation
anchor so rotation prediction is learnable) and one or more shapes drawn on a
grid of cells. Every image carries one QA record; the record's answer category
picks the question template family, so side information is informative by
construction. A rule-based checker ships with the generator and can verify any
generated answer straight from the pixels, because it reuses the same
rasterizer.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .autodiff.tnsr_io import read_tensor, write_tensor
from .dataset import Manifest, Record, SplitSpec, save_manifest
from .errors import ValidationError

SIZE = 32
STRIP_ROWS = 2

FAMILIES = ("shape", "color", "count", "position", "size", "background")
SHAPES = ("circle", "square", "triangle", "cross")
PLURALS = {"circle": "circles", "square": "squares",
           "triangle": "triangles", "cross": "crosses"}
PALETTE = {
    "red": (1.0, 0.0, 0.0), "green": (0.0, 1.0, 0.0), "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0), "magenta": (1.0, 0.0, 1.0), "cyan": (0.0, 1.0, 1.0),
}
BACKGROUNDS = {
    "black": (0.0, 0.0, 0.0), "gray": (0.25, 0.25, 0.25),
    "navy": (0.0, 0.0, 0.2), "maroon": (0.2, 0.0, 0.0),
}
NUMBER_WORDS = ("zero", "one", "two", "three", "four")


@dataclass(frozen=True)
class ToySpec:
    n_categories: int
    images_per_cat: int
    grid: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 4 <= self.n_categories <= len(FAMILIES):
            raise ValidationError(
                f"n_categories must be in [4, {len(FAMILIES)}], got {self.n_categories}")
        if self.images_per_cat < 1:
            raise ValidationError("images_per_cat must be positive")
        if self.grid < 2:
            raise ValidationError("grid must be at least 2")


def _cell_geometry(grid: int):
    ch = (SIZE - STRIP_ROWS) // grid
    cw = SIZE // grid
    r_max = min(ch, cw) // 2 - 1
    if r_max < 2:
        raise ValidationError(f"grid {grid} leaves cells too small to draw in")
    radii = {"small": max(2, r_max - 2), "large": r_max}
    centers = {(i, j): (STRIP_ROWS + i * ch + ch // 2, j * cw + cw // 2)
               for i in range(grid) for j in range(grid)}
    return centers, radii, ch, cw


def shape_mask(shape: str, cy: int, cx: int, r: int) -> np.ndarray:
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    dy, dx = yy - cy, xx - cx
    if shape == "circle":
        return dy * dy + dx * dx <= r * r
    if shape == "square":
        return np.maximum(np.abs(dy), np.abs(dx)) <= r
    if shape == "triangle":
        # apex up: half-width grows linearly from 0 at the top row to r at the base
        return (np.abs(dy) <= r) & (2 * np.abs(dx) <= dy + r)
    if shape == "cross":
        t = max(1, r // 3)
        return ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | ((np.abs(dy) <= t) & (np.abs(dx) <= r))
    raise ValidationError(f"unknown shape {shape!r}")


def render(grid: int, bg: str, shape: str, color: str, size: str, cells) -> np.ndarray:
    """Rasterize one 3x32x32 image. Deterministic; no anti-aliasing."""
    centers, radii, _, _ = _cell_geometry(grid)
    img = np.empty((3, SIZE, SIZE), dtype=np.float32)
    img[:] = np.asarray(BACKGROUNDS[bg], dtype=np.float32)[:, None, None]
    img[:, :STRIP_ROWS, :] = 1.0
    rgb = np.asarray(PALETTE[color], dtype=np.float32)
    for cell in cells:
        cy, cx = centers[cell]
        mask = shape_mask(shape, cy, cx, radii[size])
        img[:, mask] = rgb[:, None]
    return img


def _position_name(i: int, j: int, grid: int) -> str:
    if grid == 2:
        return (("top left", "top right"), ("bottom left", "bottom right"))[i][j]
    return f"row {i + 1} column {j + 1}"


def _qa_for(family, shape, color, size, bg, cells, grid):
    if family == "shape":
        return "what shape is shown in the image", shape
    if family == "color":
        return f"what color is the {shape}", color
    if family == "count":
        return f"how many {PLURALS[shape]} are there", NUMBER_WORDS[len(cells)]
    if family == "position":
        (i, j), = cells
        return f"where is the {shape}", _position_name(i, j, grid)
    if family == "size":
        return f"what size is the {shape}", size
    if family == "background":
        return "what color is the background", bg
    raise ValidationError(f"unknown family {family!r}")


def generate_toyset(spec: ToySpec, out_dir) -> Manifest:
    """Render the corpus under out_dir: images/*.tnsr + manifest.jsonl + checker_rules.json.

    Image refs in the manifest are relative to out_dir. Same spec (including
    seed) reproduces the corpus bit for bit.
    """
    rng = np.random.default_rng(spec.seed)
    centers, radii, _, _ = _cell_geometry(spec.grid)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)

    shapes, colors = list(SHAPES), sorted(PALETTE)
    bgs, sizes = sorted(BACKGROUNDS), sorted(radii)
    all_cells = sorted(centers)
    max_count = min(4, len(all_cells))

    records = []
    for family in FAMILIES[:spec.n_categories]:
        for n in range(spec.images_per_cat):
            shape = shapes[rng.integers(len(shapes))]
            color = colors[rng.integers(len(colors))]
            size = sizes[rng.integers(len(sizes))]
            bg = bgs[rng.integers(len(bgs))]
            k = int(rng.integers(1, max_count + 1)) if family == "count" else 1
            idx = rng.choice(len(all_cells), size=k, replace=False)
            cells = [all_cells[i] for i in sorted(idx)]
            img = render(spec.grid, bg, shape, color, size, cells)
            image_id = f"toy_{family}_{n:05d}"
            rel = os.path.join("images", image_id + ".tnsr")
            write_tensor(os.path.join(out_dir, rel), img)
            q, a = _qa_for(family, shape, color, size, bg, cells, spec.grid)
            records.append(Record(image_id=image_id, image_ref=rel, question=q,
                                  answer=a, answer_category=family,
                                  question_category=family, source="A"))

    manifest = Manifest(records)
    save_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    with open(os.path.join(out_dir, "checker_rules.json"), "w", encoding="utf-8") as f:
        json.dump(checker_rules(spec.grid), f, indent=1, sort_keys=True)
    return manifest


def toyset_splitspec(n_categories: int) -> SplitSpec:
    """Family prefix split: first half (rounded up) trains, the rest tests."""
    fams = FAMILIES[:n_categories]
    cut = math.ceil(len(fams) / 2)
    return SplitSpec(frozenset(fams[:cut]), frozenset(fams[cut:]))


# -- rule-based answer checker ---------------------------------------------------


def checker_rules(grid: int) -> dict:
    centers, radii, _, _ = _cell_geometry(grid)
    return {
        "size": SIZE,
        "strip_rows": STRIP_ROWS,
        "grid": grid,
        "shapes": list(SHAPES),
        "palette": {k: list(v) for k, v in PALETTE.items()},
        "backgrounds": {k: list(v) for k, v in BACKGROUNDS.items()},
        "radii": dict(radii),
        "number_words": list(NUMBER_WORDS),
    }


def load_checker_rules(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _nearest(rgb, table: dict) -> str:
    best, best_d = None, float("inf")
    for name, ref in table.items():
        d = float(np.sum((np.asarray(ref) - rgb) ** 2))
        if d < best_d:
            best, best_d = name, d
    return best


def _family_of(question: str) -> str:
    if "background" in question:
        return "background"
    if question.startswith("what shape"):
        return "shape"
    if question.startswith("what color"):
        return "color"
    if question.startswith("how many"):
        return "count"
    if question.startswith("where"):
        return "position"
    if question.startswith("what size"):
        return "size"
    raise ValidationError(f"no template family matches question {question!r}")


def check_record(rules: dict, img: np.ndarray, question: str, answer: str) -> bool:
    """Verify an answer directly from pixels using the generator's geometry.

    Recovers background, foreground color, occupied cells, and the drawn
    shape/size (by re-rendering every candidate and comparing masks), then
    recomputes what the answer should be.
    """
    grid = rules["grid"]
    strip = rules["strip_rows"]
    centers, radii, ch, cw = _cell_geometry(grid)
    if img.shape != (3, SIZE, SIZE):
        raise ValidationError(f"expected image shape (3, {SIZE}, {SIZE}), got {img.shape}")

    bg_rgb = img[:, -1, 0]  # bottom-left corner is never drawn over
    bg = _nearest(bg_rgb, rules["backgrounds"])
    fg = np.max(np.abs(img - bg_rgb[:, None, None]), axis=0) > 0.3
    fg[:strip, :] = False

    occupied = []
    for (i, j), _ in sorted(centers.items()):
        y0, x0 = strip + i * ch, j * cw
        if fg[y0:y0 + ch, x0:x0 + cw].any():
            occupied.append((i, j))
    if not occupied:
        return False

    color = _nearest(img[:, fg].mean(axis=1), rules["palette"])

    shape = size = None
    for cand in rules["shapes"]:
        for sz, r in rules["radii"].items():
            mask = np.zeros((SIZE, SIZE), dtype=bool)
            for cell in occupied:
                cy, cx = centers[cell]
                mask |= shape_mask(cand, cy, cx, r)
            if np.array_equal(mask, fg):
                shape, size = cand, sz
    if shape is None:
        return False

    family = _family_of(question)
    if family == "shape":
        expected = shape
    elif family == "color":
        expected = color
    elif family == "count":
        expected = rules["number_words"][len(occupied)]
    elif family == "position":
        if len(occupied) != 1:
            return False
        expected = _position_name(*occupied[0], grid)
    elif family == "size":
        expected = size
    else:
        expected = bg
    return expected == answer


def check_manifest(rules: dict, manifest: Manifest, root) -> float:
    """Fraction of records whose answer the pixel checker confirms."""
    if not manifest.records:
        raise ValidationError("cannot check an empty manifest")
    ok = 0
    for rec in manifest.records:
        img = read_tensor(os.path.join(root, rec.image_ref))
        ok += check_record(rules, img, rec.question, rec.answer)
    return ok / len(manifest.records)
