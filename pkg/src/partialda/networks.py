"""Feature extractor, label classifier and domain discriminator as small MLPs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import DimensionError, Tensor

CHECKPOINT_FORMAT = "partialda-checkpoint"
CHECKPOINT_VERSION = 1

HEADS = ("linear", "softmax", "sigmoid", "tanh")


@dataclass(frozen=True)
class MLPSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    head: str = "linear"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs an input width and at least one layer")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]


@dataclass
class MLP:
    spec: MLPSpec
    weights: list[Tensor]
    biases: list[Tensor]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __call__(self, x) -> Tensor:
        x = dc.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.spec.in_width:
            raise DimensionError(f"expected input of width {self.spec.in_width}, got shape {x.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = dc.affine(x, w, b)
            if i < last:
                x = dc.activation(x, self.spec.activation)
        if self.spec.head == "softmax":
            return dc.softmax(x, axis=1)
        if self.spec.head == "sigmoid":
            return dc.sigmoid(x)
        if self.spec.head == "tanh":
            return dc.tanh(x)
        return x

    def copy(self) -> "MLP":
        return MLP(
            self.spec,
            [Tensor(w.data.copy(), True) for w in self.weights],
            [Tensor(b.data.copy(), True) for b in self.biases],
        )


def init_network(spec: MLPSpec, seed: int) -> MLP:
    """Fan-in scaled uniform weights, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), True))
        biases.append(Tensor(np.zeros(fan_out), True))
    return MLP(spec, weights, biases)


@dataclass
class ModelBundle:
    """The three trainable networks: features, label classifier, discriminator."""

    F: MLP
    G_y: MLP
    G_d: MLP
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.G_y.spec.in_width != self.F.spec.out_width or self.G_d.spec.in_width != self.F.spec.out_width:
            raise DimensionError("classifier and discriminator must read the bottleneck width")
        if self.G_d.spec.out_width != 1 or self.G_d.spec.head != "sigmoid":
            raise ValueError("discriminator must end in a single sigmoid unit")
        if self.G_y.spec.head != "softmax":
            raise ValueError("label classifier must end in a softmax head")

    @property
    def n_classes(self) -> int:
        return self.G_y.spec.out_width

    def groups(self) -> dict[str, list[Tensor]]:
        return {"F": self.F.parameters(), "G_y": self.G_y.parameters(), "G_d": self.G_d.parameters()}

    def parameters(self) -> list[Tensor]:
        return self.F.parameters() + self.G_y.parameters() + self.G_d.parameters()

    def copy(self) -> "ModelBundle":
        return ModelBundle(self.F.copy(), self.G_y.copy(), self.G_d.copy(), dict(self.meta))


def build_model(
    in_width: int,
    n_classes: int,
    *,
    hidden: tuple[int, ...] = (64,),
    bottleneck: int = 32,
    disc_hidden: tuple[int, ...] = (32,),
    activation: str = "relu",
    bottleneck_head: str = "linear",
    seed: int = 0,
) -> ModelBundle:
    f_spec = MLPSpec((in_width, *hidden, bottleneck), activation, bottleneck_head)
    y_spec = MLPSpec((bottleneck, n_classes), activation, "softmax")
    d_spec = MLPSpec((bottleneck, *disc_hidden, 1), activation, "sigmoid")
    # one parent seed, three independent child streams
    sf, sy, sd = np.random.SeedSequence(seed).spawn(3)
    return ModelBundle(
        init_network(f_spec, sf),
        init_network(y_spec, sy),
        init_network(d_spec, sd),
    )


def extract_features(F: MLP, x) -> Tensor:
    return F(x)


def classify(G_y: MLP, z) -> Tensor:
    return G_y(z)


def discriminate(G_d: MLP, z, lam: float) -> Tensor:
    """Source-membership probability per row, behind a gradient-reversal node."""
    z = dc.as_tensor(z)
    if z.data.ndim != 2 or z.shape[1] != G_d.spec.in_width:
        raise DimensionError(f"expected latents of width {G_d.spec.in_width}, got shape {z.shape}")
    out = G_d(dc.reverse_gradient(z, lam))
    return dc.take(out, (slice(None), 0))


def predict(model: ModelBundle, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Classifier probabilities for ``x`` without building a graph."""
    rows = []
    for start in range(0, len(x), chunk):
        with _no_grad(model):
            rows.append(model.G_y(model.F(x[start : start + chunk])).data)
    if not rows:
        return np.zeros((0, model.n_classes))
    return np.concatenate(rows)


def latents(model: ModelBundle, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    rows = []
    for start in range(0, len(x), chunk):
        with _no_grad(model):
            rows.append(model.F(x[start : start + chunk]).data)
    if not rows:
        return np.zeros((0, model.F.spec.out_width))
    return np.concatenate(rows)


class _no_grad:
    """Temporarily mark every parameter constant so forward passes stay graph-free."""

    def __init__(self, model: ModelBundle):
        self.params = model.parameters()

    def __enter__(self):
        for p in self.params:
            p.requires_grad = False

    def __exit__(self, *exc):
        for p in self.params:
            p.requires_grad = True


# -- checkpoints -------------------------------------------------------------
#
# JSON document:
#   {"format": "partialda-checkpoint", "version": 1, "meta": {...},
#    "networks": {"F": {"spec": {...}, "weights": [[[...]]], "biases": [[...]]}, ...}}
# Floats are written with repr() so a round trip is exact.


def _net_to_dict(net: MLP) -> dict:
    return {
        "spec": asdict(net.spec),
        "weights": [w.data.tolist() for w in net.weights],
        "biases": [b.data.tolist() for b in net.biases],
    }


def _net_from_dict(d: dict) -> MLP:
    spec = MLPSpec(tuple(d["spec"]["layer_widths"]), d["spec"]["activation"], d["spec"]["head"])
    weights = [Tensor(np.array(w, dtype=np.float64).reshape(a, b), True)
               for w, a, b in zip(d["weights"], spec.layer_widths[:-1], spec.layer_widths[1:])]
    biases = [Tensor(np.array(b, dtype=np.float64), True) for b in d["biases"]]
    return MLP(spec, weights, biases)


def save_checkpoint(model: ModelBundle, path, meta: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(model.meta, **(meta or {})),
        "networks": {name: _net_to_dict(getattr(model, name)) for name in ("F", "G_y", "G_d")},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> ModelBundle:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    nets = doc["networks"]
    return ModelBundle(*(_net_from_dict(nets[k]) for k in ("F", "G_y", "G_d")), meta=doc.get("meta", {}))
