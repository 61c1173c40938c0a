"""Training loop: momentum SGD on the combined objective with periodic
re-estimation of class-importance weights."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import diffcore as dc
from .alignment import THRESHOLD_MODES, ImportanceState, update_importance
from .data import BatchSampler, Dataset
from .losses import ADV_COUPLINGS, ADV_TARGET_FORMS, Batch, LossBreakdown, total_objective
from .networks import ModelBundle, build_model, latents, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(dc.NumericError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    # networks
    hidden: tuple[int, ...] = (64,)
    bottleneck: int = 32
    disc_hidden: tuple[int, ...] = (32,)
    activation: str = "relu"
    bottleneck_head: str = "tanh"
    # optimisation
    batch_size: int = 32
    steps: int = 3000
    base_lr: float = 0.002
    momentum: float = 0.9
    new_layer_lr_mult: float = 10.0
    # objective
    alpha: float = 0.2
    beta: float = 0.9
    gamma: float = 0.7
    eta_max: float = 1.0
    adv_target_form: str = "bce"
    adv_coupling: str = "dann"
    # schedules
    eta_gamma: float = 10.0
    lr_alpha: float = 10.0
    lr_beta: float = 0.75
    # class-importance weights
    cadence: int = 150
    threshold_mode: str = "eq7"
    # bookkeeping
    seed: int = 0
    eval_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)
        if self.cadence < 1:
            raise ValueError("cadence must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        for name in ("alpha", "beta", "gamma", "eta_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.adv_target_form not in ADV_TARGET_FORMS:
            raise ValueError(f"adv_target_form must be one of {ADV_TARGET_FORMS}")
        if self.adv_coupling not in ADV_COUPLINGS:
            raise ValueError(f"adv_coupling must be one of {ADV_COUPLINGS}")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["disc_hidden"] = list(self.disc_hidden)
        return d


@dataclass
class RunHistory:
    steps: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)

    def final_weights(self) -> list[float] | None:
        return self.events[-1]["W"] if self.events else None


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float, momentum: float,
             velocity: list[np.ndarray]) -> None:
    """``v <- momentum * v + g``; ``theta <- theta - lr * v``, in place."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise dc.NumericError("non-finite gradient; step aborted")
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise dc.DimensionError(f"parameter {p.shape}, gradient {g.shape}, velocity {v.shape} disagree")
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g
        p -= lr * v


def schedule(progress: float, base_lr: float, *, eta_max: float = 1.0, eta_gamma: float = 10.0,
             lr_alpha: float = 10.0, lr_beta: float = 0.75) -> tuple[float, float]:
    """Learning rate and adversarial weight at training progress ``p`` in [0, 1].

    ``eta = eta_max * (2 / (1 + exp(-eta_gamma p)) - 1)``,
    ``lr = base_lr / (1 + lr_alpha p) ** lr_beta``.
    """
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    eta = eta_max * (2.0 / (1.0 + math.exp(-eta_gamma * progress)) - 1.0)
    lr = base_lr / (1.0 + lr_alpha * progress) ** lr_beta
    return lr, eta


def update_importance_state(model: ModelBundle, source: Dataset, target: Dataset, threshold_mode: str = "eq7",
                            previous: np.ndarray | None = None) -> ImportanceState:
    """Full-dataset forward pass followed by one center/threshold/vote/weight update."""
    if len(source) == 0 or len(target) == 0:
        raise ValueError("importance update needs non-empty source and target data")
    z_s = latents(model, np.asarray(source.x))
    z_t = latents(model, np.asarray(target.x))
    return update_importance(z_s, source.y, z_t, range(model.n_classes), mode=threshold_mode, previous=previous)


def _rngs(seed: int):
    init, src, tgt = np.random.SeedSequence(seed).spawn(3)
    return int(init.generate_state(1)[0]), np.random.default_rng(src), np.random.default_rng(tgt)


def train(config: TrainConfig, source: Dataset, target: Dataset, *, n_classes: int | None = None,
          eval_fn: Callable[[ModelBundle], dict] | None = None,
          checkpoint_dir=None) -> tuple[ModelBundle, RunHistory]:
    """Run the full optimisation.

    Only ``target.x`` is read; pass ``target.unlabeled()`` to make that
    explicit.  ``eval_fn`` (if given) is called every ``config.eval_every``
    steps and at the end, and its return value is stored in ``history.evals``.
    """
    if source.y is None:
        raise ValueError("source data must be labelled")
    K = n_classes if n_classes is not None else int(source.y.max()) + 1
    init_seed, rng_s, rng_t = _rngs(config.seed)
    model = build_model(
        source.dim, K,
        hidden=config.hidden, bottleneck=config.bottleneck, disc_hidden=config.disc_hidden,
        activation=config.activation, bottleneck_head=config.bottleneck_head, seed=init_seed,
    )
    history = RunHistory()
    W = np.ones(K)
    conf_labels = np.full(len(target), -1, dtype=np.int64)
    if config.steps == 0:
        return model, history

    groups = model.groups()
    mult = {"F": 1.0, "G_y": config.new_layer_lr_mult, "G_d": config.new_layer_lr_mult}
    velocity = {k: [np.zeros_like(p.data) for p in ps] for k, ps in groups.items()}
    sampler_s = BatchSampler(len(source), config.batch_size, rng_s)
    sampler_t = BatchSampler(len(target), config.batch_size, rng_t)
    xs, ys, xt = np.asarray(source.x), np.asarray(source.y), np.asarray(target.x)
    params = model.parameters()

    def refresh(step: int):
        nonlocal W, conf_labels
        state = update_importance_state(model, source, target, config.threshold_mode, previous=W)
        W = state.weights.copy()
        conf_labels = np.full(len(target), -1, dtype=np.int64)
        conf_labels[state.confident.indices] = state.confident.pseudo_labels
        history.events.append(state.to_record(len(history.events), step))
        log.debug("weights refreshed at step %d: T=%.4f |D_T|=%d", step, state.threshold, len(state.confident))

    for step in range(config.steps):
        if step > 0 and step % config.cadence == 0:
            refresh(step)
        lr, eta = schedule(step / config.steps, config.base_lr, eta_max=config.eta_max,
                           eta_gamma=config.eta_gamma, lr_alpha=config.lr_alpha, lr_beta=config.lr_beta)
        idx_s, idx_t = sampler_s.next(), sampler_t.next()
        batch = Batch(xs[idx_s], ys[idx_s], xt[idx_t], conf_labels[idx_t])
        dc.zero_grad(params)
        bd: LossBreakdown = total_objective(
            batch, model, W, alpha=config.alpha, beta=config.beta, gamma=config.gamma,
            eta=eta, adv_target_form=config.adv_target_form, adv_coupling=config.adv_coupling,
        )
        if not math.isfinite(bd.total):
            raise TrainingDiverged(
                f"non-finite loss at step {step}",
                {"step": step, "breakdown": bd.as_row(), "W": W.tolist(), "eta": eta, "lr": lr},
            )
        dc.backward(bd.root)
        for name, ps in groups.items():
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in ps]
            try:
                sgd_step([p.data for p in ps], grads, lr * mult[name], config.momentum, velocity[name])
            except dc.NumericError as exc:
                raise TrainingDiverged(str(exc), {"step": step, "breakdown": bd.as_row(), "W": W.tolist()}) from exc
        row = {"step": step, **bd.as_row(), "eta": eta, "lr": lr, "W": W.tolist(),
               "n_confident_batch": int((conf_labels[idx_t] >= 0).sum())}
        history.steps.append(row)
        if eval_fn is not None and config.eval_every and (step + 1) % config.eval_every == 0:
            history.evals.append({"step": step + 1, **eval_fn(model)})
        if checkpoint_dir is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, f"{checkpoint_dir}/checkpoint_{step + 1:06d}.json", {"step": step + 1})

    if config.steps % config.cadence == 0:
        refresh(config.steps)
    if eval_fn is not None and not (history.evals and history.evals[-1]["step"] == config.steps):
        history.evals.append({"step": config.steps, **eval_fn(model)})
    return model, history
