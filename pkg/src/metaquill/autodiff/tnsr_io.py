"""TNSR binary tensor files and checkpoint bundles.

File layout: magic "TNSR", u8 version=1, u8 rank, rank x u32 little-endian
dims, then the row-major float32 little-endian payload.

A checkpoint bundle is a directory holding one <param_name>.tnsr per tensor
plus a manifest.json listing names, shapes, and run metadata.
"""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np

from ..errors import ValidationError

_MAGIC = b"TNSR"
_VERSION = 1
_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


def write_tensor(path, array) -> None:
    data = np.asarray(getattr(array, "data", array), dtype="<f4")
    if data.ndim:
        data = np.ascontiguousarray(data)
    path = Path(path)
    header = _MAGIC + struct.pack("<BB", _VERSION, data.ndim)
    header += struct.pack(f"<{data.ndim}I", *data.shape)
    path.write_bytes(header + data.tobytes())


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 6 or raw[:4] != _MAGIC:
        raise ValidationError(f"{path}: not a TNSR file")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != _VERSION:
        raise ValidationError(f"{path}: unsupported TNSR version {version}")
    offset = 6
    if len(raw) < offset + 4 * rank:
        raise ValidationError(f"{path}: truncated TNSR header")
    dims = struct.unpack_from(f"<{rank}I", raw, offset) if rank else ()
    offset += 4 * rank
    count = 1
    for d in dims:
        count *= d
    if len(raw) != offset + 4 * count:
        raise ValidationError(
            f"{path}: payload length {len(raw) - offset} != expected {4 * count}")
    arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims)
    out = arr.astype(np.float32)  # copy so the result is writable and owns its memory
    return out if out.ndim == 0 else np.ascontiguousarray(out)


def save_bundle(dir_path, params: dict, meta: dict | None = None) -> None:
    """Write one .tnsr per named tensor plus manifest.json."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(params):
        if not _NAME_RE.match(name):
            raise ValidationError(f"bundle: unsafe parameter name {name!r}")
        arr = np.asarray(getattr(params[name], "data", params[name]))
        write_tensor(dir_path / f"{name}.tnsr", arr)
        entries.append({"name": name, "shape": list(arr.shape)})
    manifest = {"format": "tnsr-bundle", "version": _VERSION, "params": entries}
    manifest.update(meta or {})
    with open(dir_path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(dir_path):
    """Read a bundle back as ({name: float32 array}, manifest dict)."""
    dir_path = Path(dir_path)
    manifest_path = dir_path / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"{dir_path}: no manifest.json (not a checkpoint bundle)")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "tnsr-bundle":
        raise ValidationError(f"{manifest_path}: unrecognized bundle format")
    params = {}
    for entry in manifest["params"]:
        name = entry["name"]
        arr = read_tensor(dir_path / f"{name}.tnsr")
        if list(arr.shape) != list(entry["shape"]):
            raise ValidationError(
                f"{dir_path}: {name} shape {list(arr.shape)} != manifest {entry['shape']}")
        params[name] = arr
    return params, manifest
