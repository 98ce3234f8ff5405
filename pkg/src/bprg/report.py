"""Trajectory export: CSV, hand-rendered SVG, and an optional matplotlib PNG.

The SVG is rendered directly (no plotting library) so that identical record
lists produce byte-identical files.
"""

from __future__ import annotations

import csv
import io

from .errors import FormatError, UsageError
from .trajectory import PHASES, TrajectoryRecord

CSV_HEADER = "phase,step,sparsity,train_loss,test_accuracy,active_params,elapsed_ms"

# Fig. layout constants for the SVG
_W, _H = 800, 600
_ML, _MR, _MT, _MB = 80, 30, 40, 60
_PHASE_COLOR = {"pretrain": "#2ca02c", "prune": "#1f77b4", "regrow": "#d62728"}


def format_record(rec: TrajectoryRecord) -> str:
    return (
        f"{rec.phase},{rec.step},{rec.sparsity:.6f},{rec.train_loss:.6f},"
        f"{rec.test_accuracy:.6f},{rec.active_params},{rec.elapsed_ms}"
    )


def emit_trajectory_csv(records, path: str) -> None:
    if not records:
        raise UsageError("cannot emit CSV for an empty record list")
    lines = [CSV_HEADER] + [format_record(r) for r in records]
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))


def parse_trajectory_csv(path: str):
    with open(path, "r", encoding="ascii", newline="") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if not rows or ",".join(rows[0]) != CSV_HEADER:
        raise FormatError(f"{path}: bad or missing CSV header")
    records = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 7:
            raise FormatError(f"{path}:{i}: expected 7 fields, got {len(row)}")
        phase, step, sparsity, loss, acc, active, elapsed = row
        if phase not in PHASES:
            raise FormatError(f"{path}:{i}: unknown phase {phase!r}")
        try:
            records.append(
                TrajectoryRecord(phase, int(step), float(sparsity), float(loss),
                                 float(acc), int(active), int(elapsed))
            )
        except ValueError as e:
            raise FormatError(f"{path}:{i}: {e}") from None
    if not records:
        raise FormatError(f"{path}: no records")
    return records


def _axis_range(values):
    lo, hi = min(values), max(values)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def emit_plot_svg(records, path: str) -> None:
    """Accuracy-vs-sparsity curve: circles for pretrain points, squares for
    prune, triangles for regrow, one polyline per phase."""
    if len(records) < 2:
        raise UsageError("plot needs at least 2 records")
    xlo, xhi = _axis_range([r.sparsity for r in records])
    ylo, yhi = _axis_range([r.test_accuracy for r in records])

    def px(x):
        return _ML + (x - xlo) / (xhi - xlo) * (_W - _ML - _MR)

    def py(y):
        return _H - _MB - (y - ylo) / (yhi - ylo) * (_H - _MT - _MB)

    buf = io.StringIO()
    buf.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    buf.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">\n'
    )
    buf.write(f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>\n')
    # axes
    buf.write(
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>\n'
    )
    buf.write(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>\n')
    for tx in _ticks(xlo, xhi):
        x = px(tx)
        buf.write(f'<line x1="{x:.2f}" y1="{_H - _MB}" x2="{x:.2f}" y2="{_H - _MB + 6}" stroke="black"/>\n')
        buf.write(
            f'<text x="{x:.2f}" y="{_H - _MB + 22}" font-size="12" text-anchor="middle">{tx:.3f}</text>\n'
        )
    for ty in _ticks(ylo, yhi):
        y = py(ty)
        buf.write(f'<line x1="{_ML - 6}" y1="{y:.2f}" x2="{_ML}" y2="{y:.2f}" stroke="black"/>\n')
        buf.write(
            f'<text x="{_ML - 10}" y="{y + 4:.2f}" font-size="12" text-anchor="end">{ty:.3f}</text>\n'
        )
    buf.write(
        f'<text x="{(_ML + _W - _MR) / 2:.2f}" y="{_H - 16}" font-size="14" '
        f'text-anchor="middle">sparsity</text>\n'
    )
    buf.write(
        f'<text x="20" y="{(_MT + _H - _MB) / 2:.2f}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 20 {(_MT + _H - _MB) / 2:.2f})">test accuracy</text>\n'
    )
    # one polyline per phase, in record order
    for phase in PHASES:
        pts = [(px(r.sparsity), py(r.test_accuracy)) for r in records if r.phase == phase]
        if len(pts) >= 2:
            coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            buf.write(
                f'<polyline points="{coords}" fill="none" stroke="{_PHASE_COLOR[phase]}" '
                f'stroke-width="1.5"/>\n'
            )
    for r in records:
        x, y = px(r.sparsity), py(r.test_accuracy)
        color = _PHASE_COLOR[r.phase]
        if r.phase == "pretrain":
            buf.write(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="5" fill="{color}" stroke="black"/>\n')
        elif r.phase == "prune":
            buf.write(
                f'<rect x="{x - 4:.2f}" y="{y - 4:.2f}" width="8" height="8" fill="{color}"/>\n'
            )
        else:
            buf.write(
                f'<polygon points="{x:.2f},{y - 5:.2f} {x - 5:.2f},{y + 4:.2f} '
                f'{x + 5:.2f},{y + 4:.2f}" fill="{color}"/>\n'
            )
    buf.write("</svg>\n")
    with open(path, "wb") as f:
        f.write(buf.getvalue().encode("utf-8"))


def emit_plot_png(records, path: str) -> None:
    """Same curve rendered with matplotlib, for viewing convenience."""
    if len(records) < 2:
        raise UsageError("plot needs at least 2 records")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 6))
    markers = {"pretrain": "o", "prune": "s", "regrow": "^"}
    for phase in PHASES:
        pts = [(r.sparsity, r.test_accuracy) for r in records if r.phase == phase]
        if not pts:
            continue
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker=markers[phase], color=_PHASE_COLOR[phase], label=phase)
    ax.set_xlabel("sparsity")
    ax.set_ylabel("test accuracy")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=100)
    plt.close(fig)
