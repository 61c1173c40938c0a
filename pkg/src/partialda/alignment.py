"""Non-parametric prototype classifier and class-importance voting.

Everything here works on plain numpy arrays: these statistics are recomputed
from full-dataset forward passes at weight-update events and are constants as
far as the gradient is concerned.

Conventions
-----------
* Latents are turned into distributions with a softmax before the
  Jensen-Shannon divergence is taken (:func:`to_distribution`).
* JS uses base-2 logs, so it lies in ``[0, 1]`` and similarities
  ``(2 - JS) / 2`` lie in ``[0.5, 1]``.
* argmax ties resolve to the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

THRESHOLD_MODES = ("eq7", "zero", "groundtruth")


@dataclass(frozen=True)
class ClassCenters:
    """Mean latent per class; ``classes[i]`` owns row ``means[i]``."""

    classes: tuple[int, ...]
    means: np.ndarray
    domain: str = "source"

    def __post_init__(self):
        if self.means.shape[0] != len(self.classes):
            raise ValueError("one center row per class is required")

    def __contains__(self, c) -> bool:
        return int(c) in self.classes

    def __len__(self) -> int:
        return len(self.classes)

    def get(self, c: int) -> np.ndarray:
        return self.means[self.classes.index(int(c))]

    def ordered(self, classes) -> np.ndarray:
        """Rows for ``classes`` in that order; every class must be present."""
        missing = [int(c) for c in classes if int(c) not in self.classes]
        if missing:
            raise ValueError(f"no center for classes {missing}")
        return np.stack([self.get(c) for c in classes])


@dataclass(frozen=True)
class ConfidentTargetSet:
    indices: np.ndarray  # positions in the target dataset
    pseudo_labels: np.ndarray
    probs: np.ndarray  # [members x n_classes]
    threshold: float

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def confidences(self) -> np.ndarray:
        return self.probs.max(axis=1) if len(self) else np.zeros(0)

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.pseudo_labels))


@dataclass(frozen=True)
class ImportanceState:
    """Everything produced by one weight-update event."""

    centers: ClassCenters
    threshold: float
    confident: ConfidentTargetSet
    weights: np.ndarray
    vote_mass: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_record(self, event: int, step: int) -> dict:
        return {
            "event": event,
            "step": step,
            "threshold": float(self.threshold),
            "n_confident": len(self.confident),
            "W": [float(w) for w in self.weights],
            "vote_mass": [float(v) for v in self.vote_mass],
        }


def class_centers(latents: np.ndarray, labels: np.ndarray, classes, domain: str = "source") -> ClassCenters:
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    if latents.ndim != 2 or latents.shape[0] == 0:
        raise ValueError("class_centers needs a non-empty latent matrix")
    if labels.shape[0] != latents.shape[0]:
        raise ValueError("labels and latents disagree in length")
    present, rows = [], []
    for c in classes:
        mask = labels == c
        if mask.any():
            present.append(int(c))
            rows.append(latents[mask].mean(axis=0))
    means = np.stack(rows) if rows else np.zeros((0, latents.shape[1]))
    return ClassCenters(tuple(present), means, domain)


def to_distribution(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; accepts a vector or a matrix."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _xlog2_ratio(p: np.ndarray, m: np.ndarray) -> np.ndarray:
    # 0 * log(0 / m) is taken as 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0) / np.where(m > 0, m, 1.0)), 0.0)


def js_divergence(p, q) -> np.ndarray | float:
    """Base-2 Jensen-Shannon divergence.

    Vectors give a float; matrices broadcast row-wise along the last axis.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError(f"length mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or not np.allclose(v.sum(axis=-1), 1.0, atol=1e-9, rtol=0):
            raise ValueError(f"{name} is not a probability distribution")
    m = 0.5 * (p + q)
    js = 0.5 * _xlog2_ratio(p, m).sum(axis=-1) + 0.5 * _xlog2_ratio(q, m).sum(axis=-1)
    js = np.clip(js, 0.0, 1.0)
    return float(js) if js.ndim == 0 else js


def similarity_matrix(z: np.ndarray, centers: ClassCenters, classes) -> np.ndarray:
    """Similarity of every row of ``z`` to every class center, ``[n x |classes|]``."""
    mu = to_distribution(centers.ordered(classes))  # [k x b]
    p = to_distribution(np.atleast_2d(z))  # [n x b]
    js = js_divergence(p[:, None, :], mu[None, :, :])
    return (2.0 - np.asarray(js).reshape(p.shape[0], mu.shape[0])) / 2.0


def similarity(z_t: np.ndarray, centers: ClassCenters, classes=None) -> np.ndarray:
    classes = centers.classes if classes is None else classes
    return similarity_matrix(np.asarray(z_t)[None, :], centers, classes)[0]


def target_probs(z_t: np.ndarray, centers: ClassCenters, classes=None) -> np.ndarray:
    """Prototype-classifier probabilities: softmax of the similarity vector.

    ``z_t`` may be one latent vector or a matrix of them (one row each).
    """
    classes = centers.classes if classes is None else classes
    z_t = np.asarray(z_t, dtype=np.float64)
    probs = to_distribution(similarity_matrix(z_t, centers, classes))
    return probs[0] if z_t.ndim == 1 else probs


def pseudo_label(p_t: np.ndarray) -> int | np.ndarray:
    """argmax with ties to the lowest index (numpy's argmax already does this)."""
    p_t = np.asarray(p_t)
    out = np.argmax(p_t, axis=-1)
    return int(out) if out.ndim == 0 else out


def confidence_threshold(source_latents: np.ndarray, centers: ClassCenters, classes=None,
                         labels: np.ndarray | None = None) -> float:
    """Mean over source samples of ``max(p)``.

    Passing ``labels`` switches to the ground-truth-indexed variant: the mean
    probability assigned to each sample's own class.
    """
    source_latents = np.asarray(source_latents, dtype=np.float64)
    if source_latents.ndim != 2 or source_latents.shape[0] == 0:
        raise ValueError("confidence_threshold needs at least one source sample")
    classes = centers.classes if classes is None else tuple(classes)
    probs = target_probs(source_latents, centers, classes)
    if labels is None:
        return float(probs.max(axis=1).mean())
    col = {c: i for i, c in enumerate(classes)}
    idx = np.array([col[int(y)] for y in labels])
    return float(probs[np.arange(len(idx)), idx].mean())


def select_confident(target_latents: np.ndarray, centers: ClassCenters, threshold: float,
                     classes=None) -> ConfidentTargetSet:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    classes = centers.classes if classes is None else tuple(classes)
    target_latents = np.asarray(target_latents, dtype=np.float64)
    if target_latents.shape[0] == 0:
        return ConfidentTargetSet(np.zeros(0, int), np.zeros(0, int), np.zeros((0, len(classes))), threshold)
    probs = target_probs(target_latents, centers, classes)
    keep = np.flatnonzero(probs.max(axis=1) >= threshold)
    labels = np.asarray(classes)[np.argmax(probs[keep], axis=1)] if len(keep) else np.zeros(0, int)
    return ConfidentTargetSet(keep, labels.astype(int), probs[keep], float(threshold))


def class_weights(confident: ConfidentTargetSet, previous: np.ndarray | None = None) -> np.ndarray:
    """Average member probability vector, rescaled so its largest entry is 1.

    An empty set leaves ``previous`` (default all-ones) untouched.
    """
    if len(confident) == 0:
        n = confident.probs.shape[1]
        return np.ones(n) if previous is None else np.array(previous, dtype=np.float64)
    w = confident.probs.mean(axis=0)
    return w / w.max()


def update_importance(source_latents: np.ndarray, source_labels: np.ndarray,
                      target_latents: np.ndarray, classes, *, mode: str = "eq7",
                      previous: np.ndarray | None = None) -> ImportanceState:
    """One full pass: centers, threshold, confident selection, weights."""
    if mode not in THRESHOLD_MODES:
        raise ValueError(f"threshold mode must be one of {THRESHOLD_MODES}, got {mode!r}")
    classes = tuple(int(c) for c in classes)
    centers = class_centers(source_latents, source_labels, classes)
    if len(centers) != len(classes):
        missing = sorted(set(classes) - set(centers.classes))
        raise ValueError(f"source data has no samples for classes {missing}")
    if mode == "zero":
        threshold = 0.0
    elif mode == "groundtruth":
        threshold = confidence_threshold(source_latents, centers, classes, labels=source_labels)
    else:
        threshold = confidence_threshold(source_latents, centers, classes)
    confident = select_confident(target_latents, centers, threshold, classes)
    weights = class_weights(confident, previous)
    # soft votes: summed member probabilities, i.e. W' before averaging
    votes = confident.probs.sum(axis=0) if len(confident) else np.zeros(len(classes))
    return ImportanceState(centers, threshold, confident, weights, votes)
