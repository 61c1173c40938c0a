"""Experiment orchestration: config parsing, evaluation, reports, ablations."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import Dataset, PartialTaskSpec, generate_synthetic, load_csv
from .networks import ModelBundle, predict, save_checkpoint
from .plots import emit_plots
from .trainer import RunHistory, TrainConfig, train

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "l_class", "l_adv", "l_bc", "l_wc", "l_em", "total", "eta", "lr")

# the three suppressed-component variants, each against the full model
ABLATIONS = {
    "full": {},
    "no_adv": {"eta_max": 0.0},
    "no_bc_wc": {"alpha": 0.0, "beta": 0.0, "gamma": 0.0},
    "no_sv": {"threshold_mode": "zero"},
}


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------

_SPEC_FIELDS = {f.name: f for f in fields(PartialTaskSpec)}
_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
_DATA_KEYS = {"synthetic", "source_csv", "target_csv", "manifest"}


def _check_value(key: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and not isinstance(default, bool):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"config key {key!r}: expected {type(default).__name__}, got {value!r}")


def parse_config(doc: dict, base_dir: Path | None = None) -> dict:
    """Validate a config document.

    Returns ``{"name", "train": TrainConfig, "data": {...}}`` with CSV paths
    resolved against ``base_dir``.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    base_dir = Path(base_dir or ".")
    train_kw = {}
    for key, value in doc.items():
        if key in ("data", "name"):
            continue
        if key not in _TRAIN_FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        _check_value(key, value, _TRAIN_FIELDS[key].default)
        train_kw[key] = tuple(value) if isinstance(value, list) else value
    try:
        cfg = TrainConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    data = doc.get("data")
    if not isinstance(data, dict):
        raise ConfigError("config key 'data' is required and must be an object")
    for key in data:
        if key not in _DATA_KEYS:
            raise ConfigError(f"unknown config key 'data.{key}'")
    if "synthetic" in data:
        if "source_csv" in data or "target_csv" in data:
            raise ConfigError("config key 'data': give either 'synthetic' or CSV paths, not both")
        syn = data["synthetic"]
        if not isinstance(syn, dict):
            raise ConfigError("config key 'data.synthetic' must be an object")
        for key, value in syn.items():
            if key not in _SPEC_FIELDS:
                raise ConfigError(f"unknown config key 'data.synthetic.{key}'")
            default = _SPEC_FIELDS[key].default
            if key == "n_per_class_target" and value is not None:
                default = 0
            if value is not None:
                _check_value(f"data.synthetic.{key}", value, default)
        parsed = {"synthetic": dict(syn)}
    else:
        for key in ("source_csv", "target_csv"):
            if key not in data:
                raise ConfigError(f"config key 'data.{key}' is required when no synthetic spec is given")
            if not isinstance(data[key], str):
                raise ConfigError(f"config key 'data.{key}' must be a path string")
        parsed = {k: str((base_dir / data[k]).resolve()) for k in ("source_csv", "target_csv", "manifest") if k in data}
    return {"name": doc.get("name", "experiment"), "train": cfg, "data": parsed}


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc, path.parent)


def load_data(data_cfg: dict, seed: int | None = None) -> tuple[Dataset, Dataset, dict]:
    """Source, target (with evaluation labels) and the data manifest."""
    if "synthetic" in data_cfg:
        kw = dict(data_cfg["synthetic"])
        for key in ("target_classes", "translation"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if seed is not None and "seed" not in kw:
            kw["seed"] = seed
        try:
            spec = PartialTaskSpec(**kw)
        except ValueError as exc:
            raise ConfigError(f"config key 'data.synthetic': {exc}") from exc
        src, tgt = generate_synthetic(spec)
        return src, tgt, spec.manifest()
    for key in ("source_csv", "target_csv", "manifest"):
        if key in data_cfg and not Path(data_cfg[key]).exists():
            raise FileNotFoundError(f"dataset path not found ({key}): {data_cfg[key]}")
    src = load_csv(data_cfg["source_csv"], "source")
    tgt = load_csv(data_cfg["target_csv"], "target")
    if "manifest" in data_cfg:
        manifest = json.loads(Path(data_cfg["manifest"]).read_text(encoding="utf-8"))
    else:
        manifest = {"d": src.dim, "n_classes": int(src.y.max()) + 1 if len(src) else 0,
                    "source_csv": data_cfg["source_csv"], "target_csv": data_cfg["target_csv"]}
    return src, tgt, manifest


# -- metrics -------------------------------------------------------------------


def evaluate(model: ModelBundle, target: Dataset) -> dict:
    if target.y is None:
        raise ValueError("evaluation needs a labelled dataset")
    if len(target) == 0:
        return {"accuracy": 0.0, "per_class": {}, "counts": {}}
    pred = predict(model, np.asarray(target.x)).argmax(axis=1)
    hit = pred == target.y
    per_class, counts = {}, {}
    for c in np.unique(target.y):
        mask = target.y == c
        per_class[str(int(c))] = float(hit[mask].mean())
        counts[str(int(c))] = int(mask.sum())
    return {"accuracy": float(hit.mean()), "per_class": per_class, "counts": counts}


def weight_diagnostics(W, shared, private) -> dict:
    W = np.asarray(W, dtype=np.float64)
    shared, private = sorted(set(int(c) for c in shared)), sorted(set(int(c) for c in private))
    if not shared:
        raise ValueError("shared class set must be non-empty")
    if set(shared) & set(private):
        raise ValueError("shared and private class sets overlap")
    if set(shared) | set(private) != set(range(len(W))):
        raise ValueError("shared and private classes must cover every source class")
    mean_shared = float(W[shared].mean())
    out = {"mean_shared": mean_shared, "mean_private": None, "ratio": None}
    if private:
        out["mean_private"] = float(W[private].mean())
        out["ratio"] = out["mean_private"] / mean_shared
    return out


def _partition(manifest: dict) -> tuple[list[int], list[int]] | None:
    if "target_classes" not in manifest or "n_classes" not in manifest:
        return None
    shared = [int(c) for c in manifest["target_classes"]]
    private = [c for c in range(int(manifest["n_classes"])) if c not in shared]
    return shared, private


# -- outputs -------------------------------------------------------------------


def write_metrics_csv(history: RunHistory, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in history.steps:
            w.writerow([r["step"], *(repr(float(r[k])) for k in METRICS_HEADER[1:])])


def write_weights_csv(history: RunHistory, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("event", "class", "weight"))
        for e in history.events:
            for c, v in enumerate(e["W"]):
                w.writerow([e["event"], c, repr(float(v))])


def run_experiment(config, out_dir, *, seed: int | None = None, threshold_mode: str | None = None,
                   overrides: dict | None = None, name: str | None = None) -> dict:
    """Load or generate data, train, evaluate and write all artifacts to ``out_dir``.

    ``config`` is a path or an already-parsed config (see :func:`parse_config`).
    """
    parsed = load_config(config) if isinstance(config, (str, Path)) else config
    cfg_dict = parsed["train"].to_dict()
    if seed is not None:
        cfg_dict["seed"] = seed
    if threshold_mode is not None:
        cfg_dict["threshold_mode"] = threshold_mode
    cfg_dict.update(overrides or {})
    cfg = TrainConfig(**cfg_dict)
    source, target, manifest = load_data(parsed["data"], seed=cfg.seed)

    partition = _partition(manifest)
    if partition is not None:
        stray = set(target.classes()) - set(partition[0])
        if stray:
            raise ValueError(f"target data contains samples of private classes {sorted(stray)}")
    n_classes = int(manifest.get("n_classes") or int(source.y.max()) + 1)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    model, history = train(cfg, source, target.unlabeled(), n_classes=n_classes,
                           eval_fn=lambda m: {"accuracy": evaluate(m, target)["accuracy"]},
                           checkpoint_dir=out if cfg.checkpoint_every else None)
    wall = time.perf_counter() - started
    metrics = evaluate(model, target)

    write_metrics_csv(history, out / "metrics.csv")
    write_weights_csv(history, out / "weights.csv")
    save_checkpoint(model, out / "model.json", {"seed": cfg.seed, "steps": cfg.steps})
    emit_plots(history, out, private=set(partition[1]) if partition else set())

    final_W = history.final_weights() or [1.0] * n_classes
    diag = weight_diagnostics(final_W, *partition) if partition else None
    trajectory = {str(c): [1.0] + [e["W"][c] for e in history.events] for c in range(n_classes)}
    report = {
        "name": name or parsed.get("name", "experiment"),
        "config": cfg.to_dict(),
        "data_manifest": manifest,
        "target_accuracy": metrics["accuracy"],
        "per_class_accuracy": metrics["per_class"],
        "target_counts": metrics["counts"],
        "final_weights": final_W,
        "weight_diagnostics": diag,
        "weight_trajectory": trajectory,
        "events": history.events,
        "accuracy_curve": history.evals,
        "final_losses": {k: history.steps[-1][k] for k in METRICS_HEADER[1:]} if history.steps else None,
        "output_dir": str(out.resolve()),
        "artifacts": sorted(p.name for p in out.iterdir()),
        "wall_clock_seconds": wall,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    log.info("%s: accuracy %.4f in %.1fs", report["name"], metrics["accuracy"], wall)
    return report


def _run_variant(args):
    parsed, out_dir, seed, name = args
    return name, run_experiment(parsed, out_dir, seed=seed, overrides=ABLATIONS[name], name=name)


def run_ablation(config, out_dir, *, seed: int | None = None, workers: int = 1) -> dict:
    """Full model plus the three suppressed-component variants under one seed."""
    parsed = load_config(config) if isinstance(config, (str, Path)) else config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(parsed, out / name, seed, name) for name in ABLATIONS]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_run_variant, jobs))
    else:
        results = dict(map(_run_variant, jobs))
    rows = []
    for name in ABLATIONS:
        rep = results[name]
        diag = rep["weight_diagnostics"] or {}
        rows.append({
            "variant": name,
            "accuracy": rep["target_accuracy"],
            "mean_w_shared": diag.get("mean_shared"),
            "mean_w_private": diag.get("mean_private"),
        })
    with (out / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    lines = ["| variant | target accuracy | mean W shared | mean W private |", "|---|---|---|---|"]
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    for r in rows:
        lines.append(f"| {r['variant']} | {fmt(r['accuracy'])} | {fmt(r['mean_w_shared'])} | {fmt(r['mean_w_private'])} |")
    (out / "comparison.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = {"seed": results["full"]["config"]["seed"], "variants": rows}
    (out / "ablation.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return {"summary": summary, "reports": results}
