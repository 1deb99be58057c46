"""CSV/JSON tables and SVG line charts."""

from __future__ import annotations

import csv
import io
import json
from typing import Iterable, Sequence, TextIO
from xml.sax.saxutils import escape

import numpy as np

from .sweep import SweepRow

CSV_HEADER = ("epsilon", "eta_eps", "fpp0", "newton_iterations", "mesh_points")

COMPONENTS = {
    "f": ("f", "#1f77b4"),
    "fp": ("f′", "#d62728"),
    "fpp": ("f″", "#2ca02c"),
}


def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_rows_csv(rows: Iterable[SweepRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow(
            [_fmt(r.epsilon), _fmt(r.eta_eps), _fmt(r.fpp0), r.newton_iterations, r.mesh_points]
        )


def read_rows_csv(stream: TextIO) -> list[SweepRow]:
    lines = [ln for ln in stream if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [
        SweepRow(
            epsilon=float(d["epsilon"]),
            eta_eps=float(d["eta_eps"]),
            fpp0=float(d["fpp0"]),
            newton_iterations=int(d["newton_iterations"]),
            mesh_points=int(d["mesh_points"]),
        )
        for d in reader
    ]


def rows_to_json(rows: Sequence[SweepRow]) -> str:
    return json.dumps([dict(zip(CSV_HEADER, (r.epsilon, r.eta_eps, r.fpp0,
                                              r.newton_iterations, r.mesh_points)))
                       for r in rows], indent=2)


def _ticks(lo: float, hi: float, count: int = 6) -> np.ndarray:
    span = hi - lo
    raw = span / max(count - 1, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def render_svg(
    eta: np.ndarray,
    curves: dict,
    title: str = "",
    width: int = 720,
    height: int = 480,
) -> str:
    """Line chart of ``curves`` (key -> values over ``eta``) as an SVG document.

    Keys of ``curves`` must be in :data:`COMPONENTS`. Each curve is a single
    ``polyline`` with one vertex per sample. The data-to-pixel map is stored
    on the root element as ``data-*`` attributes.
    """
    left, right, top, bottom = 70, 150, 40, 60
    pw, ph = width - left - right, height - top - bottom
    x_min, x_max = 0.0, float(eta[-1])
    ys = np.concatenate([np.asarray(v) for v in curves.values()])
    y_min = min(0.0, float(ys.min()))
    y_max = float(ys.max())
    if y_max <= y_min:
        y_max = y_min + 1.0
    y_max += 0.05 * (y_max - y_min)

    def px(x):
        return left + (np.asarray(x) - x_min) / (x_max - x_min) * pw

    def py(y):
        return top + ph - (np.asarray(y) - y_min) / (y_max - y_min) * ph

    out = io.StringIO()
    w = out.write
    w('<?xml version="1.0" encoding="UTF-8"?>\n')
    w(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" data-x-min="{_fmt(x_min)}" data-x-max="{_fmt(x_max)}" '
        f'data-y-min="{_fmt(y_min)}" data-y-max="{_fmt(y_max)}" data-plot-left="{left}" '
        f'data-plot-top="{top}" data-plot-width="{pw}" data-plot-height="{ph}">\n'
    )
    w('<rect width="100%" height="100%" fill="white"/>\n')
    if title:
        w(f'<text x="{left + pw / 2}" y="22" text-anchor="middle" font-size="15" '
          f'font-family="sans-serif">{escape(title)}</text>\n')
    w(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>\n')

    for t in _ticks(x_min, x_max):
        x = float(px(t))
        w(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 5}" stroke="black"/>\n')
        w(f'<text x="{x:.2f}" y="{top + ph + 20}" text-anchor="middle" font-size="12" '
          f'font-family="sans-serif">{t:g}</text>\n')
    for t in _ticks(y_min, y_max):
        y = float(py(t))
        w(f'<line x1="{left - 5}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>\n')
        w(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="12" '
          f'font-family="sans-serif">{t:g}</text>\n')
    w(f'<text x="{left + pw / 2}" y="{height - 15}" text-anchor="middle" font-size="14" '
      f'font-family="serif" font-style="italic">η</text>\n')

    for i, (key, values) in enumerate(curves.items()):
        label, color = COMPONENTS[key]
        pts = " ".join(f"{a:.6f},{b:.6f}" for a, b in zip(px(eta), py(values)))
        w(f'<polyline class="curve" data-component="{key}" fill="none" stroke="{color}" '
          f'stroke-width="1.5" points="{pts}"/>\n')
        ly = top + 20 + 22 * i
        lx = left + pw + 15
        w(f'<line x1="{lx}" y1="{ly}" x2="{lx + 25}" y2="{ly}" stroke="{color}" stroke-width="2"/>\n')
        w(f'<text x="{lx + 32}" y="{ly + 4}" font-size="14" font-family="serif" '
          f'font-style="italic">{escape(label)}</text>\n')
    w("</svg>\n")
    return out.getvalue()
