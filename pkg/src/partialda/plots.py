"""Self-contained SVG line charts for training curves."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")
LOSS_SERIES = ("l_class", "l_adv", "l_bc", "l_wc", "l_em", "total")
WIDTH, HEIGHT, PAD = 720, 360, 48


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo or 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def line_chart(series: dict[str, tuple[list[float], list[float]]], title: str, *,
               dashed: set[str] = frozenset(), ylabel: str = "") -> str:
    """One ``<polyline>`` per series, one point per sample, fixed viewBox."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys if math.isfinite(y)]
    x_lo, x_hi = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    y_lo, y_hi = (min(ys_all), max(ys_all)) if ys_all else (0.0, 1.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<text x="{PAD}" y="{HEIGHT - PAD + 16}" font-size="10">{x_lo:g}</text>',
        f'<text x="{WIDTH - PAD}" y="{HEIGHT - PAD + 16}" font-size="10" text-anchor="end">{x_hi:g}</text>',
        f'<text x="{PAD - 4}" y="{HEIGHT - PAD}" font-size="10" text-anchor="end">{y_lo:.3g}</text>',
        f'<text x="{PAD - 4}" y="{PAD + 4}" font-size="10" text-anchor="end">{y_hi:.3g}</text>',
    ]
    if ylabel:
        parts.append(f'<text x="12" y="{HEIGHT / 2}" font-size="10" transform="rotate(-90 12 {HEIGHT / 2})">'
                     f'{escape(ylabel)}</text>')
    for k, (name, (xs, ys)) in enumerate(series.items()):
        colour = PALETTE[k % len(PALETTE)]
        px = _scale(xs, x_lo, x_hi, PAD, WIDTH - PAD)
        py = _scale([y if math.isfinite(y) else y_lo for y in ys], y_lo, y_hi, HEIGHT - PAD, PAD)
        points = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        dash = ' stroke-dasharray="6,3"' if name in dashed else ""
        parts.append(f'<polyline data-series="{escape(name)}" fill="none" stroke="{colour}" '
                     f'stroke-width="1.5"{dash} points="{points}"/>')
        ly = PAD + 14 * k
        parts.append(f'<line x1="{WIDTH - PAD - 110}" y1="{ly}" x2="{WIDTH - PAD - 90}" y2="{ly}" '
                     f'stroke="{colour}" stroke-width="2"{dash}/>')
        parts.append(f'<text x="{WIDTH - PAD - 86}" y="{ly + 4}" font-size="10">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_plots(history, out_dir, private: set[int] | frozenset = frozenset()) -> dict[str, Path]:
    """Write loss / weight / accuracy charts and the CSVs they were drawn from.

    Private classes (if any are given) are drawn dashed and labelled in the
    weight chart legend.
    """
    if not history.steps:
        raise ValueError("cannot plot an empty history")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    steps = [float(r["step"]) for r in history.steps]
    loss = {name: (steps, [float(r[name]) for r in history.steps]) for name in LOSS_SERIES}
    paths["loss_csv"] = out / "loss_curves.csv"
    _write_csv(paths["loss_csv"], ("step", *LOSS_SERIES),
               ([r["step"], *(repr(float(r[n])) for n in LOSS_SERIES)] for r in history.steps))
    paths["loss_svg"] = out / "loss.svg"
    paths["loss_svg"].write_text(line_chart(loss, "loss terms vs step", ylabel="loss"), encoding="utf-8")

    n_classes = len(history.steps[0]["W"])
    ev_steps = [0.0] + [float(e["step"]) for e in history.events]
    traj = [[1.0] * n_classes] + [e["W"] for e in history.events]
    w_series, dashed = {}, set()
    for c in range(n_classes):
        name = f"class {c}" + (" (private)" if c in private else "")
        if c in private:
            dashed.add(name)
        w_series[name] = (ev_steps, [float(w[c]) for w in traj])
    paths["weights_csv"] = out / "weight_trajectory.csv"
    _write_csv(paths["weights_csv"], ("step", *(f"w{c}" for c in range(n_classes))),
               ([int(s), *(repr(float(v)) for v in w)] for s, w in zip(ev_steps, traj)))
    paths["weights_svg"] = out / "weights.svg"
    paths["weights_svg"].write_text(line_chart(w_series, "class-importance weights", dashed=dashed,
                                               ylabel="weight"), encoding="utf-8")

    acc_steps = [float(e["step"]) for e in history.evals]
    acc = [float(e["accuracy"]) for e in history.evals]
    paths["accuracy_csv"] = out / "accuracy.csv"
    _write_csv(paths["accuracy_csv"], ("step", "accuracy"),
               ([int(s), repr(a)] for s, a in zip(acc_steps, acc)))
    paths["accuracy_svg"] = out / "accuracy.svg"
    paths["accuracy_svg"].write_text(line_chart({"target accuracy": (acc_steps, acc)}, "target accuracy vs step",
                                                ylabel="accuracy"), encoding="utf-8")
    return paths
