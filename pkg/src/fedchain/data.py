"""Synthetic blob datasets, i.i.d client partitioning and data pointers.

A pointer is a URI string. ``synth://seed=1&n=50&d=2&classes=2[&rot=..&shift=..]``
regenerates a dataset deterministically; ``file:///path.csv`` loads a CSV whose
header is ``f0,...,f{d-1},label``.

The class geometry (centers) depends only on ``d``, ``classes``, ``rot`` and
``shift``; ``seed`` drives sampling. Two pointers that differ only in seed are
therefore independent samples of the same task.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import parse_qsl, unquote, urlparse

import numpy as np

RING_RADIUS = 2.0
NOISE_STD = 1.0
_GEOMETRY_SALT = 0x5EED_B10B


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int
    provenance: str = ""

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.size:
            raise ValueError("features must be a 2-d array with one row per label")
        if y.size and (y.min() < 0 or y.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.classes, self.provenance)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.classes)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.classes == other.classes
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


def synth_uri(seed: int, n: int, d: int, classes: int, rot: float = 0.0, shift: float = 0.0) -> str:
    uri = f"synth://seed={int(seed)}&n={int(n)}&d={int(d)}&classes={int(classes)}"
    if rot:
        uri += f"&rot={float(rot)!r}"
    if shift:
        uri += f"&shift={float(shift)!r}"
    return uri


def class_centers(d: int, classes: int, rot: float = 0.0, shift: float = 0.0) -> np.ndarray:
    """Class centers: a ring in the first two dims plus ``shift`` times fixed offsets."""
    angles = 2.0 * np.pi * np.arange(classes) / classes + rot
    centers = np.zeros((classes, d))
    centers[:, 0] = RING_RADIUS * np.cos(angles)
    centers[:, 1] = RING_RADIUS * np.sin(angles)
    if shift:
        offsets = np.random.default_rng([_GEOMETRY_SALT, d, classes]).standard_normal((classes, d))
        centers += shift * offsets
    return centers


def make_blobs(seed: int, n: int, d: int, classes: int, rot: float = 0.0, shift: float = 0.0) -> Dataset:
    """Gaussian clusters around :func:`class_centers`; row ``i`` has label ``i % classes``."""
    if classes < 2 or n < classes or d < 2:
        raise ValueError(f"need n >= classes >= 2 and d >= 2 (n={n}, d={d}, classes={classes})")
    if not (math.isfinite(rot) and math.isfinite(shift)):
        raise ValueError("rot and shift must be finite")
    labels = np.arange(n) % classes
    noise = np.random.default_rng(seed).standard_normal((n, d)) * NOISE_STD
    features = class_centers(d, classes, rot, shift)[labels] + noise
    return Dataset(features, labels, classes, synth_uri(seed, n, d, classes, rot, shift))


def partition_iid(ds: Dataset, k: int, seed: int) -> list[Dataset]:
    """Shuffle each class, then deal its rows round-robin across ``k`` clients.

    Dealing continues across classes so total shard sizes also differ by at most one.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = ds.class_counts()
    if np.any(counts[counts > 0] < k):
        raise ValueError(f"{k} clients exceed the smallest class size {counts[counts > 0].min()}")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in range(k)]
    dealt = 0
    for c in range(ds.classes):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(idx.size)]
        for j, row in enumerate(idx):
            parts[(dealt + j) % k].append(row)
        dealt += idx.size
    return [ds.subset(np.sort(np.array(p, dtype=np.int64))) for p in parts]


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(ds)
    n_test = int(math.floor(test_fraction * n + 0.5))
    if n_test == 0 or n_test == n:
        raise ValueError(f"split of {n} rows at {test_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


def concat(parts: list[Dataset]) -> Dataset:
    return Dataset(np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   max(p.classes for p in parts))


def to_csv(ds: Dataset, path) -> str:
    """Write ``ds`` as CSV and return its ``file://`` pointer."""
    path = Path(path).resolve()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(ds.dim)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
    return path.as_uri()


def _load_csv(path: Path) -> Dataset:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FileNotFoundError(f"cannot open dataset {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header = rows[0]
    d = len(header) - 1
    if d < 1 or header != [f"f{i}" for i in range(d)] + ["label"]:
        raise ValueError(f"{path}: header must be f0,...,f{{d-1}},label")
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    try:
        feats = np.array([[float(v) for v in r[:-1]] for r in rows[1:]])
        labels = np.array([int(r[-1]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from exc
    if feats.shape != (len(rows) - 1, d):
        raise ValueError(f"{path}: ragged rows")
    if labels.min() < 0:
        raise ValueError(f"{path}: negative label")
    return Dataset(feats, labels, int(labels.max()) + 1, path.as_uri())


def parse_synth(uri: str) -> dict:
    if not uri.startswith("synth://"):
        raise ValueError(f"not a synth:// pointer: {uri!r}")
    query = uri[len("synth://"):].lstrip("?")
    try:
        pairs = parse_qsl(query, strict_parsing=True)
    except ValueError as exc:
        raise ValueError(f"unparseable pointer {uri!r}") from exc
    params = dict(pairs)
    if len(params) != len(pairs):
        raise ValueError(f"repeated key in {uri!r}")
    required = {"seed", "n", "d", "classes"}
    allowed = required | {"rot", "shift"}
    if not required <= params.keys() or not params.keys() <= allowed:
        raise ValueError(f"pointer {uri!r} needs keys {sorted(required)} (optional rot, shift)")
    try:
        out = {k: int(params[k]) for k in ("seed", "n", "d", "classes")}
        out["rot"] = float(params.get("rot", 0.0))
        out["shift"] = float(params.get("shift", 0.0))
    except ValueError as exc:
        raise ValueError(f"bad number in pointer {uri!r}") from exc
    return out


def resolve_pointer(uri: str) -> Dataset:
    if uri.startswith("synth://"):
        return make_blobs(**parse_synth(uri))
    if uri.startswith("file://"):
        parsed = urlparse(uri)
        return _load_csv(Path(unquote(parsed.path)))
    raise ValueError(f"unsupported pointer scheme: {uri!r}")
