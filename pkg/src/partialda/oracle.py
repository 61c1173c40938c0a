"""Straight-line recomputation of the prototype-voting pipeline.

Deliberately written with Python lists and :mod:`math` only, sharing no code
with :mod:`partialda.alignment`, so the two can be checked against each other.
"""

from __future__ import annotations

import math
import random


def centers(latents, labels, classes):
    out = {}
    for c in classes:
        rows = [z for z, y in zip(latents, labels) if y == c]
        if not rows:
            continue
        dim = len(rows[0])
        out[c] = [math.fsum(r[k] for r in rows) / len(rows) for k in range(dim)]
    return out


def softmax(v):
    top = max(v)
    e = [math.exp(x - top) for x in v]
    s = math.fsum(e)
    return [x / s for x in e]


def js(p, q):
    total = 0.0
    for a, b in zip(p, q):
        m = (a + b) / 2.0
        if a > 0:
            total += 0.5 * a * math.log2(a / m)
        if b > 0:
            total += 0.5 * b * math.log2(b / m)
    return min(max(total, 0.0), 1.0)


def phi(z, cents, classes):
    pz = softmax(z)
    return [(2.0 - js(pz, softmax(cents[c]))) / 2.0 for c in classes]


def argmax(v):
    best = 0
    for i in range(1, len(v)):
        if v[i] > v[best]:
            best = i
    return best


def pipeline(src_latents, src_labels, tgt_latents, classes, threshold_mode="eq7", previous=None):
    """Return a dict with centers, phi, probs, pseudo-labels, threshold,
    confident indices and weights for one weight-update event."""
    classes = list(classes)
    cents = centers(src_latents, src_labels, classes)
    src_probs = [softmax(phi(z, cents, classes)) for z in src_latents]
    if threshold_mode == "zero":
        threshold = 0.0
    elif threshold_mode == "groundtruth":
        threshold = math.fsum(p[classes.index(y)] for p, y in zip(src_probs, src_labels)) / len(src_probs)
    else:
        threshold = math.fsum(max(p) for p in src_probs) / len(src_probs)
    phis = [phi(z, cents, classes) for z in tgt_latents]
    probs = [softmax(f) for f in phis]
    pseudo = [classes[argmax(p)] for p in probs]
    chosen = [j for j, p in enumerate(probs) if max(p) >= threshold]
    if chosen:
        w_raw = [math.fsum(probs[j][k] for j in chosen) / len(chosen) for k in range(len(classes))]
        top = max(w_raw)
        weights = [w / top for w in w_raw]
    else:
        weights = list(previous) if previous is not None else [1.0] * len(classes)
    return {
        "centers": cents,
        "phi": phis,
        "probs": probs,
        "pseudo_labels": pseudo,
        "threshold": threshold,
        "confident": chosen,
        "weights": weights,
    }


def random_instance(rng: random.Random, max_samples: int = 20, max_classes: int = 5, dim: int | None = None):
    """A small random problem: every class has at least one source sample."""
    k = rng.randint(2, max_classes)
    dim = dim or rng.randint(2, 6)
    n_src = rng.randint(k, max_samples)
    n_tgt = rng.randint(1, max_samples)
    labels = list(range(k)) + [rng.randrange(k) for _ in range(n_src - k)]
    rng.shuffle(labels)
    scale = rng.choice([0.5, 1.0, 3.0])
    src = [[rng.gauss(0.0, scale) + 0.8 * (y == (j % k)) for j in range(dim)] for y in labels]
    tgt = [[rng.gauss(0.0, scale) for _ in range(dim)] for _ in range(n_tgt)]
    return src, labels, tgt, list(range(k))
