"""Self-checks behind the ``gradcheck`` and ``oracle-check`` commands."""

from __future__ import annotations

import random

import numpy as np

from . import alignment as al
from . import diffcore as dc
from . import losses as L
from . import oracle
from .diffcore import Tensor
from .networks import build_model

TERMS = ("l_class", "l_adv", "l_bc", "l_wc", "l_em", "total")


def _random_problem(rng: np.random.Generator, n_s: int = 6, n_t: int = 4, d: int = 3, K: int = 3):
    x_s = rng.normal(size=(n_s, d))
    x_t = rng.normal(size=(n_t, d))
    y_s = np.concatenate([np.arange(K), rng.integers(0, K, n_s - K)])
    # at least two distinct confident pseudo-labels so the cross-domain terms are live
    conf = np.full(n_t, -1)
    picks = rng.choice(n_t, size=min(n_t, 3), replace=False)
    conf[picks] = rng.permutation(K)[: len(picks)]
    W = rng.uniform(0.2, 1.0, K)
    W /= W.max()
    return x_s, y_s, x_t, conf, W


def gradcheck_term(term: str, rng: np.random.Generator, eps: float = 1e-4) -> float:
    """Finite-difference error of one loss term on a fresh random problem."""
    K, b = 3, 4
    x_s, y_s, x_t, conf, W = _random_problem(rng, K=K)
    if term == "l_class":
        logits = Tensor(rng.normal(size=(len(y_s), K)), True)
        return dc.finite_diff_check(lambda: L.classification_loss(dc.softmax(logits, axis=1), y_s, W), [logits], eps)
    if term == "l_em":
        logits = Tensor(rng.normal(size=(len(x_t), K)), True)
        return dc.finite_diff_check(lambda: L.entropy_loss(dc.softmax(logits, axis=1)), [logits], eps)
    if term == "l_adv":
        a_s = Tensor(rng.normal(size=len(y_s)), True)
        a_t = Tensor(rng.normal(size=len(x_t)), True)
        return dc.finite_diff_check(
            lambda: L.adversarial_loss(dc.sigmoid(a_s), dc.sigmoid(a_t), y_s, W), [a_s, a_t], eps)
    if term == "l_bc":
        z_s = Tensor(rng.normal(size=(len(y_s), b)), True)
        z_t = Tensor(rng.normal(size=(len(x_t), b)), True)
        rows = np.flatnonzero(conf >= 0)

        def f():
            cs = L.batch_centers(z_s, y_s, range(K))
            ct = L.batch_centers(dc.take(z_t, rows), conf[rows], range(K))
            return L.between_class_loss(cs, ct, 0.2, 0.9)

        return dc.finite_diff_check(f, [z_s, z_t], eps)
    if term == "l_wc":
        z = Tensor(rng.normal(size=(len(y_s) + 3, b)), True)
        labels = np.concatenate([y_s, rng.integers(0, K, 3)])
        return dc.finite_diff_check(lambda: L.within_class_loss(z, labels, K), [z], eps)
    if term == "total":
        model = build_model(x_s.shape[1], K, hidden=(5,), bottleneck=b, disc_hidden=(3,),
                            activation="tanh", seed=int(rng.integers(1 << 31)))
        batch = L.Batch(x_s, y_s, x_t, conf)
        hp = dict(alpha=0.2, beta=0.9, gamma=0.7, eta=float(rng.uniform(0.1, 1.0)))
        return dc.finite_diff_check(lambda: L.total_objective(batch, model, W, adv_coupling="plain", **hp).root,
                                    model.parameters(), eps)
    raise ValueError(f"unknown term {term!r}")


def gradcheck_suite(trials: int = 20, seed: int = 0, eps: float = 1e-4) -> dict[str, float]:
    """Worst finite-difference error per term over ``trials`` random problems."""
    rng = np.random.default_rng(seed)
    return {t: max(gradcheck_term(t, rng, eps) for _ in range(trials)) for t in TERMS}


def _max_dev(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return float("inf")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def compare_with_oracle(src, labels, tgt, classes, mode: str = "eq7") -> dict[str, float]:
    """Largest deviation between :mod:`alignment` and the list-based oracle,
    per quantity.  Set-valued outputs report 0 on exact agreement, inf otherwise."""
    ref = oracle.pipeline(src, labels, tgt, classes, threshold_mode=mode)
    src_a, tgt_a, lab_a = np.array(src), np.array(tgt), np.array(labels)
    cents = al.class_centers(src_a, lab_a, classes)
    dev = {"centers": _max_dev(cents.ordered(classes), [ref["centers"][c] for c in classes])}
    phis = np.stack([al.similarity(z, cents, classes) for z in tgt_a])
    dev["phi"] = _max_dev(phis, ref["phi"])
    probs = al.target_probs(tgt_a, cents, classes)
    dev["probs"] = _max_dev(probs, ref["probs"])
    pseudo = [classes[al.pseudo_label(p)] for p in probs]
    dev["pseudo_labels"] = 0.0 if pseudo == ref["pseudo_labels"] else float("inf")
    state = al.update_importance(src_a, lab_a, tgt_a, classes, mode=mode)
    dev["threshold"] = abs(state.threshold - ref["threshold"])
    dev["confident"] = 0.0 if list(state.confident.indices) == ref["confident"] else float("inf")
    dev["weights"] = _max_dev(state.weights, ref["weights"])
    return dev


def oracle_suite(instances: int = 100, seed: int = 0, modes=("eq7",)) -> dict[str, float]:
    rng = random.Random(seed)
    worst: dict[str, float] = {}
    for _ in range(instances):
        src, labels, tgt, classes = oracle.random_instance(rng)
        for mode in modes:
            for k, v in compare_with_oracle(src, labels, tgt, classes, mode).items():
                worst[k] = max(worst.get(k, 0.0), v)
    return worst
