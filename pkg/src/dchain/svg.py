"""Minimal static SVG line plots built from an emitted CSV.

The plot reads its numbers back from the CSV file, so every SVG shows
exactly the values stored in its sibling CSV.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

_W, _H = 640, 420
_L, _R, _T, _B = 70, 150, 40, 50
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#7f7f7f", "#17becf", "#bcbd22")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def read_series(csv_path, x: str, y: str, group=None, where: dict | None = None) -> dict:
    """``{label: (xs, ys)}`` from a CSV; rows with empty or non-finite values are skipped.

    ``group`` is a column name or a sequence of names; ``where`` maps a column
    to an accepted value or a set of accepted values.
    """
    cols = [group] if isinstance(group, str) else list(group or [])
    series: dict = {}
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            if where and any(row.get(k) not in (v if isinstance(v, (set, frozenset, list, tuple))
                                                 else {v}) for k, v in where.items()):
                continue
            try:
                xv, yv = float(row[x]), float(row[y])
            except (TypeError, ValueError):
                continue
            if not (math.isfinite(xv) and math.isfinite(yv)):
                continue
            label = ",".join(f"{c}={row[c]}" for c in cols) if cols else y
            xs, ys = series.setdefault(label, ([], []))
            xs.append(xv)
            ys.append(yv)
    return series


def line_plot(svg_path, series: dict, xlabel: str, ylabel: str, title: str = "",
              logx: bool = False, logy: bool = False, markers: bool = False) -> None:
    """Write polylines with axes, ticks and a legend."""
    fx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    fy = (lambda v: math.log10(v)) if logy else (lambda v: v)
    pts = {k: [(fx(a), fy(b)) for a, b in zip(*v) if (not logx or a > 0) and (not logy or b > 0)]
           for k, v in series.items()}
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = _W - _L - _R, _H - _T - _B

    def sx(v):
        return _L + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return _T + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
           f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    if title:
        out.append(f'<text x="{_L + pw / 2:.1f}" y="{_T - 15}" text-anchor="middle" '
                   f'font-size="13">{_esc(title)}</text>')
    for v in _ticks(x0, x1):
        X = sx(v)
        lab = _fmt(10 ** v) if logx else _fmt(v)
        out.append(f'<line x1="{X:.2f}" y1="{_T + ph}" x2="{X:.2f}" y2="{_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{_T + ph + 18}" text-anchor="middle">{lab}</text>')
    for v in _ticks(y0, y1):
        Y = sy(v)
        lab = _fmt(10 ** v) if logy else _fmt(v)
        out.append(f'<line x1="{_L - 5}" y1="{Y:.2f}" x2="{_L}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{_L - 8}" y="{Y + 4:.2f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{_L + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="15" y="{_T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {_T + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for i, (label, p) in enumerate(pts.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in p)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        if markers:
            for a, b in p:
                out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" fill="{color}"/>')
        ly = _T + 12 + 16 * i
        out.append(f'<line x1="{_L + pw + 10}" y1="{ly}" x2="{_L + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_L + pw + 35}" y="{ly + 4}">{_esc(label)}</text>')
    out.append("</svg>")
    Path(svg_path).write_text("\n".join(out) + "\n")


def plot_csv(csv_path, x: str, y: str, group=None, title: str = "",
             svg_path=None, where: dict | None = None, **kw) -> Path:
    """Plot columns of ``csv_path`` into a sibling ``.svg`` (same stem by default)."""
    csv_path = Path(csv_path)
    svg_path = Path(svg_path) if svg_path else csv_path.with_suffix(".svg")
    line_plot(svg_path, read_series(csv_path, x, y, group, where), x, y, title, **kw)
    return svg_path


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
