"""Loss terms of the training objective, built on :mod:`partialda.diffcore`.

Natural logs everywhere here, clamped at ``1e-12``.  Class weights ``W`` are
plain arrays: they are refreshed between steps, never differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .networks import ModelBundle

ADV_TARGET_FORMS = ("bce", "printed")
ADV_COUPLINGS = ("dann", "scaled", "plain")


@dataclass(frozen=True)
class Centers:
    """Differentiable class means: ``means[i]`` belongs to ``classes[i]``."""

    classes: tuple[int, ...]
    means: Tensor

    def __len__(self) -> int:
        return len(self.classes)


@dataclass
class LossBreakdown:
    l_class: float
    l_adv: float
    l_bc: float
    l_wc: float
    l_em: float
    total: float
    alpha: float
    beta: float
    gamma: float
    eta: float
    root: Tensor | None = field(default=None, repr=False, compare=False)

    def as_row(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("l_class", "l_adv", "l_bc", "l_wc", "l_em", "total")}


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    return labels


def batch_centers(latents: Tensor, labels: np.ndarray, classes) -> Centers:
    """Per-class means of ``latents`` for every class in ``classes`` that occurs."""
    labels = np.asarray(labels)
    present = tuple(int(c) for c in classes if np.any(labels == c))
    if not present:
        return Centers((), Tensor(np.zeros((0, latents.shape[1]))))
    onehot = (labels[None, :] == np.array(present)[:, None]).astype(np.float64)
    return Centers(present, dc.segment_mean(latents, onehot))


def classification_loss(probs_s: Tensor, y_s: np.ndarray, W: np.ndarray) -> Tensor:
    W = np.asarray(W, dtype=np.float64)
    y_s = _check_labels(y_s, probs_s.shape[1])
    if len(y_s) != probs_s.shape[0]:
        raise ValueError("one label per probability row is required")
    picked = dc.take(probs_s, (np.arange(len(y_s)), y_s))
    return dc.neg(dc.mean(dc.mul(dc.log(picked), W[y_s])))


def adversarial_loss(d_s: Tensor, d_t: Tensor, y_s: np.ndarray, W: np.ndarray, form: str = "bce") -> Tensor:
    """Weighted domain-classification loss; ``d`` is the source-membership probability.

    ``form="bce"`` uses ``log(1 - d_t)`` for the target term; ``"printed"``
    uses ``1 - log(d_t)`` literally.
    """
    if form not in ADV_TARGET_FORMS:
        raise ValueError(f"adv_target_form must be one of {ADV_TARGET_FORMS}, got {form!r}")
    W = np.asarray(W, dtype=np.float64)
    y_s = _check_labels(y_s, len(W))
    src = dc.mean(dc.mul(dc.log(d_s), W[y_s]))
    if form == "bce":
        tgt = dc.mean(dc.log(1.0 - d_t))
    else:
        tgt = dc.mean(1.0 - dc.log(d_t))
    return dc.neg(src + tgt)


def _ordered_pairs(k: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.nonzero(~np.eye(k, dtype=bool))
    return i, j


def _mean_pair_distance(a: Tensor, b: Tensor, i: np.ndarray, j: np.ndarray, denom: int) -> Tensor:
    diff = dc.take(a, i) - dc.take(b, j)
    return dc.mul(dc.sum(dc.norm(diff, axis=1)), 1.0 / denom)


def between_class_loss(centers_s: Centers, centers_T: Centers, alpha: float, beta: float) -> Tensor:
    """Negated spread of class means within and across domains.

    Terms over a class set with fewer than two classes are zero.  The
    cross-domain term pairs a source mean of class ``c`` with confident-target
    means of every other class ``c'``, for ``c, c'`` in the confident class
    set; pairs whose source class is absent from ``centers_s`` are skipped
    but the normaliser stays ``|C_T|(|C_T|-1)``.
    """
    zero = Tensor(0.0)
    if alpha == 0 and beta == 0:
        return zero
    ks, kt = len(centers_s), len(centers_T)
    within = zero
    if ks >= 2:
        i, j = _ordered_pairs(ks)
        within = within + _mean_pair_distance(centers_s.means, centers_s.means, i, j, ks * (ks - 1))
    if kt >= 2:
        i, j = _ordered_pairs(kt)
        within = within + _mean_pair_distance(centers_T.means, centers_T.means, i, j, kt * (kt - 1))
    cross = zero
    if kt >= 2:
        src_row = {c: r for r, c in enumerate(centers_s.classes)}
        pairs = [(src_row[c], b) for a, c in enumerate(centers_T.classes) if c in src_row
                 for b in range(kt) if b != a]
        if pairs:
            i = np.array([p[0] for p in pairs])
            j = np.array([p[1] for p in pairs])
            cross = _mean_pair_distance(centers_s.means, centers_T.means, i, j, kt * (kt - 1))
    return dc.neg(dc.mul(within, alpha) + dc.mul(cross, beta))


def within_class_loss(latents: Tensor, labels: np.ndarray, n_classes: int) -> Tensor:
    """Mean squared pairwise distance inside each class, averaged over ``n_classes``.

    Uses ``sum_{i != j} |z_i - z_j|^2 = 2 n sum_i |z_i - mean|^2``.
    """
    labels = _check_labels(labels, n_classes)
    counts = np.bincount(labels, minlength=n_classes)
    live = np.flatnonzero(counts >= 2)
    if len(live) == 0:
        return Tensor(0.0)
    keep = np.isin(labels, live)
    rows = np.flatnonzero(keep)
    z = dc.take(latents, rows)
    lab = labels[rows]
    cents = batch_centers(z, lab, live)
    slot = np.searchsorted(np.array(cents.classes), lab)
    resid = z - dc.take(cents.means, slot)
    sq = dc.sum(dc.square(resid), axis=1)
    n = counts[lab].astype(np.float64)
    coef = 2.0 / ((n - 1.0) * n_classes)
    return dc.sum(dc.mul(sq, coef))


def entropy_loss(probs_t: Tensor) -> Tensor:
    return dc.neg(dc.mean(dc.sum(dc.mul(probs_t, dc.log(probs_t)), axis=1)))


@dataclass
class Batch:
    """One optimisation step's inputs.

    ``conf_labels`` holds the frozen pseudo-label of each target row that
    belongs to the confident set, and ``-1`` for rows that do not.
    """

    x_s: np.ndarray
    y_s: np.ndarray
    x_t: np.ndarray
    conf_labels: np.ndarray | None = None

    @property
    def conf_mask(self) -> np.ndarray:
        if self.conf_labels is None:
            return np.zeros(len(self.x_t), dtype=bool)
        return np.asarray(self.conf_labels) >= 0


def total_objective(batch: Batch, model: ModelBundle, W: np.ndarray, *, alpha: float, beta: float,
                    gamma: float, eta: float, adv_target_form: str = "bce",
                    adv_coupling: str = "dann") -> LossBreakdown:
    """Assemble all five terms; ``root`` of the result is the differentiable total.

    The value of ``root`` is always ``l_class + eta*l_adv + l_bc + gamma*l_wc + l_em``.
    ``adv_coupling`` decides how the adversarial gradient is routed:

    * ``"dann"``: eta is the reversal strength.  The discriminator receives
      the unscaled gradient of ``l_adv`` and the feature extractor ``-eta``
      times it.
    * ``"scaled"``: unit-strength reversal with the term scaled by eta, so
      both the discriminator and (negated) the feature extractor see
      ``eta`` times the gradient.
    * ``"plain"``: no reversal node; ``root`` differentiates to the true
      gradient of the total (what finite differences measure).
    """
    if adv_coupling not in ADV_COUPLINGS:
        raise ValueError(f"adv_coupling must be one of {ADV_COUPLINGS}, got {adv_coupling!r}")
    K = model.n_classes
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (K,):
        raise ValueError(f"class weights must have length {K}, got shape {W.shape}")
    y_s = _check_labels(batch.y_s, K)
    z_s = model.F(batch.x_s)
    z_t = model.F(batch.x_t)
    p_s = model.G_y(z_s)
    p_t = model.G_y(z_t)

    l_class = classification_loss(p_s, y_s, W)
    l_em = entropy_loss(p_t)

    if adv_coupling == "plain":
        d_s = dc.take(model.G_d(z_s), (slice(None), 0))
        d_t = dc.take(model.G_d(z_t), (slice(None), 0))
    else:
        lam = eta if adv_coupling == "dann" else 1.0
        d_s = dc.take(model.G_d(dc.reverse_gradient(z_s, lam)), (slice(None), 0))
        d_t = dc.take(model.G_d(dc.reverse_gradient(z_t, lam)), (slice(None), 0))
    l_adv = adversarial_loss(d_s, d_t, y_s, W, adv_target_form)
    # switched-off terms are still reported but kept out of the graph
    if eta == 0:
        adv_term = Tensor(0.0)
    elif adv_coupling == "dann":
        adv_term = dc.mul(dc.scale_gradient(l_adv, 1.0 / eta), eta)
    else:
        adv_term = dc.mul(l_adv, eta)

    mask = batch.conf_mask
    conf_rows = np.flatnonzero(mask)
    conf_y = np.asarray(batch.conf_labels)[conf_rows] if len(conf_rows) else np.zeros(0, int)
    z_conf = dc.take(z_t, conf_rows) if len(conf_rows) else None

    classes = range(K)
    if alpha == 0 and beta == 0:
        l_bc = Tensor(0.0)
    else:
        cs = batch_centers(z_s, y_s, classes)
        ct = batch_centers(z_conf, conf_y, classes) if z_conf is not None else Centers((), Tensor(np.zeros((0, z_s.shape[1]))))
        l_bc = between_class_loss(cs, ct, alpha, beta)

    pooled = dc.concat([z_s, z_conf]) if z_conf is not None else z_s
    pooled_y = np.concatenate([y_s, conf_y]).astype(np.int64)
    l_wc = within_class_loss(pooled, pooled_y, K)
    wc_term = Tensor(0.0) if gamma == 0 else dc.mul(l_wc, gamma)

    total = l_class + adv_term + l_bc + wc_term + l_em
    return LossBreakdown(
        l_class=l_class.item() + 0.0,
        l_adv=l_adv.item() + 0.0,
        l_bc=l_bc.item() + 0.0,
        l_wc=l_wc.item() + 0.0,
        l_em=l_em.item() + 0.0,
        total=total.item() + 0.0,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        eta=eta,
        root=total,
    )
