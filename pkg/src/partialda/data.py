"""Datasets for partial-label-space transfer.

The synthetic task puts one Gaussian blob per source class on a circle in the
first two feature dimensions (remaining dimensions are pure noise).  The
target domain only draws from a subset of the classes and is rotated,
translated and jittered.

CSV format: header ``f0,...,f{d-1},label`` then one sample per row.  Floats
are written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DOMAINS = ("source", "target")


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with labels.

    For the target domain the labels are for evaluation only; training code
    should receive :meth:`unlabeled` instead.
    """

    x: np.ndarray
    y: np.ndarray | None
    domain: str
    manifest: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        x = np.array(self.x, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise ValueError(f"features must be a 2-d array, got shape {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if self.y is not None:
            y = np.array(self.y, dtype=np.int64, copy=True)
            if y.shape != (x.shape[0],):
                raise ValueError("one label per sample is required")
            y.setflags(write=False)
            object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def eval_only_labels(self) -> bool:
        return self.domain == "target"

    def classes(self) -> tuple[int, ...]:
        if self.y is None:
            return ()
        return tuple(int(c) for c in np.unique(self.y))

    def unlabeled(self) -> "Dataset":
        return Dataset(self.x, None, self.domain, self.manifest)

    def with_labels(self, y) -> "Dataset":
        return Dataset(self.x, y, self.domain, self.manifest)


@dataclass(frozen=True)
class PartialTaskSpec:
    n_classes: int = 5
    target_classes: tuple[int, ...] = (0, 1, 2)
    n_per_class: int = 100
    n_per_class_target: int | None = None
    dim: int = 8
    radius: float = 3.0
    cluster_std: float = 0.6
    rotation_deg: float = 30.0
    translation: tuple[float, ...] = (0.0, 0.0)
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        tc = tuple(int(c) for c in self.target_classes)
        object.__setattr__(self, "target_classes", tc)
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if not tc:
            raise ValueError("target class set must be non-empty")
        bad = [c for c in tc if not 0 <= c < self.n_classes]
        if bad:
            raise ValueError(f"target classes {bad} are not source classes 0..{self.n_classes - 1}")
        if len(set(tc)) != len(tc):
            raise ValueError("target classes must be distinct")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if len(self.translation) > self.dim:
            raise ValueError("translation has more entries than feature dimensions")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be positive")

    @property
    def private_classes(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.n_classes) if c not in self.target_classes)

    def manifest(self) -> dict:
        return {
            "d": self.dim,
            "n_classes": self.n_classes,
            "source_classes": list(range(self.n_classes)),
            "target_classes": list(self.target_classes),
            "seed": self.seed,
            "shift": {
                "rotation_deg": self.rotation_deg,
                "translation": list(self.translation),
                "noise": self.noise,
            },
            "n_per_class": self.n_per_class,
            "n_per_class_target": self.n_per_class_target or self.n_per_class,
            "radius": self.radius,
            "cluster_std": self.cluster_std,
        }


def class_means(spec: PartialTaskSpec) -> np.ndarray:
    angles = 2.0 * math.pi * np.arange(spec.n_classes) / spec.n_classes
    means = np.zeros((spec.n_classes, spec.dim))
    means[:, 0] = spec.radius * np.cos(angles)
    means[:, 1] = spec.radius * np.sin(angles)
    return means


def _shift(x: np.ndarray, spec: PartialTaskSpec, rng: np.random.Generator) -> np.ndarray:
    theta = math.radians(spec.rotation_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    out = x.copy()
    out[:, :2] = x[:, :2] @ rot.T
    out[:, : len(spec.translation)] += np.asarray(spec.translation)
    if spec.noise > 0:
        out += rng.normal(0.0, spec.noise, size=out.shape)
    return out


def generate_synthetic(spec: PartialTaskSpec) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec)
    n_t = spec.n_per_class_target or spec.n_per_class

    def blobs(classes, n):
        y = np.repeat(np.asarray(classes, dtype=np.int64), n)
        x = means[y] + rng.normal(0.0, spec.cluster_std, size=(len(y), spec.dim))
        return x, y

    xs, ys = blobs(range(spec.n_classes), spec.n_per_class)
    xt, yt = blobs(spec.target_classes, n_t)
    xt = _shift(xt, spec, rng)
    manifest = spec.manifest()
    return Dataset(xs, ys, "source", manifest), Dataset(xt, yt, "target", manifest)


# -- CSV ---------------------------------------------------------------------


def write_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(dataset.dim)] + ["label"])
        labels = dataset.y if dataset.y is not None else np.full(len(dataset), -1)
        for row, y in zip(dataset.x, labels):
            w.writerow([format(float(v), ".17g") for v in row] + [int(y)])


def load_csv(path, role: str) -> Dataset:
    if role not in DOMAINS:
        raise ValueError(f"role must be one of {DOMAINS}, got {role!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataFormatError(f"{path}:1: missing header")
        header = [h.strip() for h in header]
        d = len(header) - 1
        expected = [f"f{i}" for i in range(d)] + ["label"]
        if d < 1 or header != expected:
            raise DataFormatError(f"{path}:1: header must be f0,...,f{{d-1}},label; got {','.join(header)}")
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DataFormatError(f"{path}:{lineno}: expected {d + 1} fields, found {len(row)}")
            try:
                feats = [float(v) for v in row[:d]]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric feature value") from None
            try:
                label = int(row[d])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: label must be an integer, got {row[d]!r}") from None
            if not all(math.isfinite(v) for v in feats):
                raise DataFormatError(f"{path}:{lineno}: non-finite feature value")
            xs.append(feats)
            ys.append(label)
    x = np.array(xs, dtype=np.float64).reshape(len(xs), d)
    return Dataset(x, np.array(ys, dtype=np.int64), role)


def export_synthetic(spec: PartialTaskSpec, out_dir) -> tuple[Path, Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    src, tgt = generate_synthetic(spec)
    paths = out_dir / "source.csv", out_dir / "target.csv", out_dir / "manifest.json"
    write_csv(src, paths[0])
    write_csv(tgt, paths[1])
    paths[2].write_text(json.dumps(spec.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


# -- batching ----------------------------------------------------------------


class BatchSampler:
    """Endless stream of index batches drawn epoch by epoch without replacement.

    Each epoch is a fresh permutation; batches are consecutive chunks of the
    concatenated permutations, so one that straddles an epoch boundary takes
    the tail of one permutation and the head of the next.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if n < 1:
            raise ValueError("cannot sample from an empty dataset")
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._perm = rng.permutation(n)
        self._pos = 0
        self.epoch = 0

    def next(self) -> np.ndarray:
        out = []
        need = self.batch_size
        while need:
            if self._pos == self.n:
                self._perm = self.rng.permutation(self.n)
                self._pos = 0
                self.epoch += 1
            take = min(need, self.n - self._pos)
            out.append(self._perm[self._pos : self._pos + take])
            self._pos += take
            need -= take
        return np.concatenate(out)


def sample_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """One batch of distinct indices (capped at the dataset size)."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    return rng.permutation(len(dataset))[: min(batch_size, len(dataset))]
