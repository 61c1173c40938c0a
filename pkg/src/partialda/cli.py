"""Command-line entry point: ``partialda <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .alignment import THRESHOLD_MODES


def _cmd_generate(args) -> int:
    from .data import PartialTaskSpec, export_synthetic
    from .harness import ConfigError, load_config

    if args.config:
        parsed = load_config(args.config)
        if "synthetic" not in parsed["data"]:
            raise ConfigError("config key 'data.synthetic' is required for generate")
        kw = dict(parsed["data"]["synthetic"])
    else:
        kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    for key in ("target_classes", "translation"):
        if key in kw:
            kw[key] = tuple(kw[key])
    paths = export_synthetic(PartialTaskSpec(**kw), args.out)
    for p in paths:
        print(p)
    return 0


def _cmd_train(args) -> int:
    from .harness import run_experiment

    if args.ablate:
        return _cmd_ablate(args)
    report = run_experiment(args.config, args.out, seed=args.seed, threshold_mode=args.threshold_mode)
    print(f"target accuracy {report['target_accuracy']:.4f}  -> {Path(args.out) / 'report.json'}")
    if report["weight_diagnostics"]:
        d = report["weight_diagnostics"]
        print(f"mean W shared {d['mean_shared']:.4f}  private {d['mean_private']}")
    return 0


def _cmd_ablate(args) -> int:
    from .harness import run_ablation

    run_ablation(args.config, args.out, seed=args.seed, workers=getattr(args, "workers", 1))
    print((Path(args.out) / "comparison.md").read_text(encoding="utf-8"), end="")
    return 0


def _cmd_evaluate(args) -> int:
    from .data import load_csv
    from .harness import evaluate, load_config, load_data
    from .networks import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    if args.target_csv:
        target = load_csv(args.target_csv, "target")
    else:
        _, target, _ = load_data(load_config(args.config)["data"], seed=args.seed)
    print(json.dumps(evaluate(model, target), indent=2))
    return 0


def _cmd_gradcheck(args) -> int:
    from .checks import gradcheck_suite

    worst = gradcheck_suite(trials=args.trials, seed=args.seed or 0, eps=args.eps)
    failed = False
    for term, err in worst.items():
        ok = err <= args.tol
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'}  {term:8s} max relative error {err:.3e}")
    return 1 if failed else 0


def _cmd_oracle_check(args) -> int:
    from .checks import oracle_suite

    worst = oracle_suite(instances=args.instances, seed=args.seed or 0, modes=THRESHOLD_MODES)
    failed = False
    for name, dev in worst.items():
        ok = dev <= args.tol
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:14s} max deviation {dev:.3e}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="partialda", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")

    g = sub.add_parser("generate", help="write a synthetic task as CSV files plus manifest")
    common(g, config_required=False)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)

    t = sub.add_parser("train", help="train one model and write its report")
    common(t)
    t.add_argument("--out", required=True)
    t.add_argument("--ablate", action="store_true", help="also run the three ablation variants")
    t.add_argument("--threshold-mode", choices=THRESHOLD_MODES, default=None)
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=_cmd_train)

    a = sub.add_parser("ablate", help="full model plus the three ablation variants")
    common(a)
    a.add_argument("--out", required=True)
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=_cmd_ablate)

    e = sub.add_parser("evaluate", help="accuracy of a saved checkpoint on target data")
    common(e, config_required=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--target-csv", default=None)
    e.set_defaults(func=_cmd_evaluate)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every loss term")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--trials", type=int, default=20)
    gc.add_argument("--eps", type=float, default=1e-4)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(func=_cmd_gradcheck)

    oc = sub.add_parser("oracle-check", help="compare the voting pipeline with a brute-force oracle")
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--instances", type=int, default=100)
    oc.add_argument("--tol", type=float, default=1e-10)
    oc.set_defaults(func=_cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "evaluate" and not (args.config or args.target_csv):
        print("error: evaluate needs --config or --target-csv", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
