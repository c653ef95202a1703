"""Patch bundles, label-map graymaps and marginal dumps on disk.

A bundle is a JSON manifest plus one raw little-endian float32 file per
patch, ``height x width x 6`` with the channel fastest.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import NUM_GLOBAL, NUM_LOCAL, SIZE_CLASSES, BeliefField, GlobalLabelMap, PatchError, PixelGrid, SoftmaxPatch, validate_patch

MANIFEST = "manifest.json"
_F32 = np.dtype("<f4")


class BundleError(ValueError):
    """Malformed manifest, missing data or shape mismatch."""


class LabelMapError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _manifest_path(path) -> Path:
    path = Path(path)
    return path / MANIFEST if path.is_dir() else path


def write_bundle(directory, patches: Sequence[SoftmaxPatch], grid: PixelGrid) -> Path:
    directory = Path(directory)
    records = []
    for p in patches:
        name = f"{p.patch_id}.f32"
        atomic_write(directory / name, np.ascontiguousarray(p.probs, dtype=_F32).tobytes())
        records.append(
            {
                "id": p.patch_id,
                "x0": int(p.x0),
                "y0": int(p.y0),
                "width": int(p.width),
                "height": int(p.height),
                "size_class": p.size_class,
                "data_path": name,
            }
        )
    manifest = {"width": grid.width, "height": grid.height, "num_local_labels": NUM_LOCAL, "patches": records}
    out = directory / MANIFEST
    atomic_write(out, (json.dumps(manifest, indent=2) + "\n").encode())
    return out


def _field(rec: dict, key: str, kind, where: str):
    if key not in rec:
        raise BundleError(f"{where}: missing field {key!r}")
    v = rec[key]
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise BundleError(f"{where}: {key} must be an integer")
    if kind is str and not isinstance(v, str):
        raise BundleError(f"{where}: {key} must be a string")
    return v


def read_bundle(path) -> tuple[PixelGrid, list[SoftmaxPatch]]:
    """Load and validate a bundle; probabilities stay float32 as stored."""
    mpath = _manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError as e:
        raise BundleError(f"no manifest at {mpath}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise BundleError(f"{mpath}: not valid JSON ({e})") from e
    if not isinstance(manifest, dict):
        raise BundleError(f"{mpath}: manifest must be an object")
    width = _field(manifest, "width", int, "manifest")
    height = _field(manifest, "height", int, "manifest")
    n_local = _field(manifest, "num_local_labels", int, "manifest")
    if n_local != NUM_LOCAL:
        raise BundleError(f"manifest: num_local_labels must be {NUM_LOCAL}, got {n_local}")
    try:
        grid = PixelGrid(width, height)
    except ValueError as e:
        raise BundleError(f"manifest: {e}") from e
    records = manifest.get("patches")
    if not isinstance(records, list) or not records:
        raise BundleError("manifest: patches must be a non-empty list")
    patches = []
    for k, rec in enumerate(records):
        where = f"patch record {k}"
        if not isinstance(rec, dict):
            raise BundleError(f"{where}: must be an object")
        pid = _field(rec, "id", str, where)
        x0, y0 = _field(rec, "x0", int, where), _field(rec, "y0", int, where)
        w, h = _field(rec, "width", int, where), _field(rec, "height", int, where)
        cls = _field(rec, "size_class", str, where)
        if cls not in SIZE_CLASSES:
            raise BundleError(f"{where}: unknown size_class {cls!r}")
        if w < 1 or h < 1:
            raise BundleError(f"{where}: empty window")
        data_path = mpath.parent / _field(rec, "data_path", str, where)
        try:
            raw = data_path.read_bytes()
        except OSError as e:
            raise BundleError(f"{where}: cannot read {data_path} ({e.strerror})") from e
        expect = h * w * NUM_LOCAL * _F32.itemsize
        if len(raw) != expect:
            raise BundleError(f"{where}: {data_path.name} holds {len(raw)} bytes, expected {expect} for {h}x{w}x{NUM_LOCAL}")
        probs = np.frombuffer(raw, dtype=_F32).reshape(h, w, NUM_LOCAL)
        patch = SoftmaxPatch(pid, (x0, y0), cls, probs)
        try:
            validate_patch(patch, grid)
        except PatchError as e:
            raise BundleError(str(e)) from e
        patches.append(patch)
    return grid, patches


def encode_pgm(labels: np.ndarray) -> bytes:
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise LabelMapError(f"label map must be 2-D, got {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= NUM_GLOBAL):
        raise LabelMapError(f"labels must lie in [0, {NUM_GLOBAL - 1}]")
    h, w = lab.shape
    return f"P5\n{w} {h}\n255\n".encode() + lab.astype(np.uint8).tobytes()


def write_label_map(path, labels: GlobalLabelMap | np.ndarray) -> None:
    lab = labels.labels if isinstance(labels, GlobalLabelMap) else labels
    atomic_write(path, encode_pgm(lab))


def _pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments."""
    out, i = [], 2
    while len(out) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and data[j : j + 1].isdigit():
            j += 1
        if j == i:
            raise LabelMapError("malformed graymap header")
        out.append(int(data[i:j]))
        i = j
    return out, i + 1


def read_label_map(path) -> GlobalLabelMap:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise LabelMapError(f"{path}: not a binary graymap")
    (w, h, maxval), start = _pgm_tokens(data, 3)
    if maxval != 255:
        raise LabelMapError(f"{path}: maxval must be 255, got {maxval}")
    body = data[start:]
    if len(body) != w * h:
        raise LabelMapError(f"{path}: expected {w * h} pixel bytes, got {len(body)}")
    lab = np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.int64)
    if lab.size and lab.max() >= NUM_GLOBAL:
        raise LabelMapError(f"{path}: pixel value {lab.max()} above {NUM_GLOBAL - 1}")
    return GlobalLabelMap(PixelGrid(w, h), lab)


def write_marginals(path, belief: BeliefField) -> None:
    """Raw ``height x width x 10`` float32, little-endian."""
    atomic_write(path, np.ascontiguousarray(belief.as_image(), dtype=_F32).tobytes())


def read_marginals(path, grid: PixelGrid) -> np.ndarray:
    raw = Path(path).read_bytes()
    expect = grid.size * NUM_GLOBAL * _F32.itemsize
    if len(raw) != expect:
        raise BundleError(f"{path}: {len(raw)} bytes, expected {expect}")
    return np.frombuffer(raw, dtype=_F32).reshape(grid.height, grid.width, NUM_GLOBAL)
