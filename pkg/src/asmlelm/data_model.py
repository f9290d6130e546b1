"""Hypercube and label containers, raw file I/O, scaling and sampling."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed cubes, label grids or sampling requests."""


@dataclass(frozen=True)
class HsiCube:
    """Hyperspectral cube stored as a ``(rows, cols, bands)`` float array."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise DataError(f"cube must be a non-empty 3-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("cube contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class LabelGrid:
    """Per-pixel labels; 0 marks unlabeled pixels, classes are 1..M."""

    labels: np.ndarray
    n_classes: int = 0

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise DataError(f"label grid must be 2-D, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            if not np.all(lab == np.round(lab)):
                raise DataError("label grid must hold integers")
        lab = lab.astype(np.int64)
        if lab.size and lab.min() < 0:
            raise DataError("negative labels are not allowed")
        m = self.n_classes or int(lab.max(initial=0))
        if lab.size and lab.max() > m:
            raise DataError(f"label {lab.max()} exceeds class count {m}")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "n_classes", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class SampleSet:
    """Column-per-sample feature matrix with labels and pixel coordinates.

    ``features`` is ``d x n``; ``coords`` is an ``n x 2`` integer array of
    ``(row, col)`` positions in the source cube.
    """

    features: np.ndarray
    labels: np.ndarray
    coords: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64).ravel()
        if X.ndim != 2:
            raise DataError("features must be a d x n matrix")
        if X.shape[1] != y.size:
            raise DataError(f"{X.shape[1]} feature columns but {y.size} labels")
        if self.coords is None:
            c = np.full((y.size, 2), -1, dtype=np.int64)
        else:
            c = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
            if c.shape[0] != y.size:
                raise DataError("coords length differs from label count")
        for a in (X, y, c):
            a.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def d(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.features[:, idx], self.labels[idx], self.coords[idx])


# ---------------------------------------------------------------------------
# raw file I/O: little-endian payload + JSON sidecar

_DTYPES = {"f32le": np.dtype("<f4"), "f64le": np.dtype("<f8"), "i16le": np.dtype("<i2")}


def _sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".json") if p.suffix else p.with_name(p.name + ".json")


def _read_header(path) -> dict:
    hp = _sidecar_path(path)
    if not hp.exists():
        raise DataError(f"missing header {hp}")
    try:
        header = json.loads(hp.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"header {hp} is not valid JSON: {exc}") from exc
    for key in ("rows", "cols", "bands", "dtype"):
        if key not in header:
            raise DataError(f"header {hp} lacks field '{key}'")
        if key != "dtype" and (not isinstance(header[key], int) or header[key] < 1):
            raise DataError(f"header field '{key}' must be a positive integer")
    if header["dtype"] not in _DTYPES:
        raise DataError(f"unsupported dtype '{header['dtype']}'")
    if header.get("order", "bsq") != "bsq":
        raise DataError(f"unsupported order '{header['order']}'")
    return header


def _read_payload(path, header) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing payload {p}")
    dt = _DTYPES[header["dtype"]]
    expected = header["rows"] * header["cols"] * header["bands"]
    raw = p.read_bytes()
    if len(raw) != expected * dt.itemsize:
        raise DataError(
            f"payload size: {p} holds {len(raw)} bytes, header implies "
            f"{expected * dt.itemsize}"
        )
    return np.frombuffer(raw, dtype=dt)


def load_cube(path) -> HsiCube:
    """Read a band-sequential cube and its ``<name>.json`` sidecar."""
    header = _read_header(path)
    flat = _read_payload(path, header)
    if not np.all(np.isfinite(flat)):
        raise DataError(f"values: {path} contains non-finite entries")
    bsq = flat.reshape(header["bands"], header["rows"], header["cols"])
    return HsiCube(np.transpose(bsq, (1, 2, 0)).astype(np.float64))


def write_cube(cube: HsiCube, path, dtype: str = "f32le") -> None:
    dt = _DTYPES[dtype]
    bsq = np.ascontiguousarray(np.transpose(cube.values, (2, 0, 1)), dtype=dt)
    _write_raw(path, bsq.tobytes(), cube.rows, cube.cols, cube.bands, dtype)


def load_labels(path) -> LabelGrid:
    header = _read_header(path)
    if header["bands"] != 1:
        raise DataError("bands: label files must declare bands=1")
    flat = _read_payload(path, header)
    return LabelGrid(flat.reshape(header["rows"], header["cols"]).astype(np.int64))


def write_labels(grid: LabelGrid, path) -> None:
    rows, cols = grid.shape
    payload = np.ascontiguousarray(grid.labels, dtype="<i2").tobytes()
    _write_raw(path, payload, rows, cols, 1, "i16le")


def _write_raw(path, payload: bytes, rows, cols, bands, dtype) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(payload)
    header = {"rows": rows, "cols": cols, "bands": bands, "dtype": dtype, "order": "bsq"}
    _sidecar_path(p).write_text(json.dumps(header, indent=2) + "\n")


# ---------------------------------------------------------------------------
# transforms


def minmax_scale(cube: HsiCube) -> HsiCube:
    """Map the whole cube affinely onto [0, 1] using its global min and max.

    A constant cube maps to all zeros.
    """
    lo, hi = float(cube.values.min()), float(cube.values.max())
    return apply_scale(cube, lo, hi)


def apply_scale(cube: HsiCube, lo: float, hi: float) -> HsiCube:
    if hi <= lo:
        return HsiCube(np.zeros_like(cube.values))
    return HsiCube((cube.values - lo) / (hi - lo))


def one_hot(labels, n_classes: int) -> np.ndarray:
    """``M x n`` indicator matrix with a single 1 per column at row ``label - 1``."""
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size and (y.min() < 1 or y.max() > n_classes):
        raise DataError(f"labels must lie in 1..{n_classes}")
    Y = np.zeros((n_classes, y.size))
    Y[y - 1, np.arange(y.size)] = 1.0
    return Y


def flatten_labeled(cube: HsiCube, grid: LabelGrid) -> SampleSet:
    """One column per labeled pixel, in row-major pixel order."""
    if grid.shape != (cube.rows, cube.cols):
        raise DataError(f"label grid {grid.shape} does not match cube {(cube.rows, cube.cols)}")
    rr, cc = np.nonzero(grid.labels)
    return SampleSet(
        cube.values[rr, cc, :].T.reshape(cube.bands, rr.size),
        grid.labels[rr, cc],
        np.stack([rr, cc], axis=1),
    )


def all_pixels(cube: HsiCube) -> SampleSet:
    """Every pixel as a sample (labels set to 0), row-major."""
    rr, cc = np.divmod(np.arange(cube.rows * cube.cols), cube.cols)
    X = cube.values.reshape(-1, cube.bands).T
    return SampleSet(X, np.zeros(rr.size, dtype=np.int64), np.stack([rr, cc], axis=1))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_per_class(grid: LabelGrid, cube: HsiCube, *, fraction=None, count=None,
                    seed: int = 0) -> tuple[SampleSet, SampleSet]:
    """Seeded per-class train/test split.

    Exactly one of ``fraction`` or ``count`` must be given. Fraction mode
    takes ``round(fraction * size)`` (half rounds up, at least 1) per class;
    count mode takes ``min(count, ceil(size / 2))``.
    """
    if (fraction is None) == (count is None):
        raise DataError("give exactly one of fraction or count")
    if fraction is not None and not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must lie in (0, 1), got {fraction}")
    if count is not None and count < 1:
        raise DataError(f"count must be >= 1, got {count}")

    samples = flatten_labeled(cube, grid)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for k in range(1, grid.n_classes + 1):
        members = np.flatnonzero(samples.labels == k)
        if members.size == 0:
            raise DataError(f"class {k} has no labeled pixels")
        members = members[rng.permutation(members.size)]
        if fraction is not None:
            n_train = max(1, _round_half_up(fraction * members.size))
        else:
            n_train = min(count, math.ceil(members.size / 2))
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    train = samples.subset(np.sort(np.concatenate(train_idx)))
    test = samples.subset(np.sort(np.concatenate(test_idx)))
    return train, test


def sidecar_path(path) -> Path:
    return _sidecar_path(path)


def atomic_write_bytes(path, payload: bytes) -> None:
    p = Path(path)
    tmp = p.with_name(p.name + ".part")
    tmp.write_bytes(payload)
    os.replace(tmp, p)
