"""Standalone SVG learning curves from metrics CSVs."""
from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

from .harness import CSV_COLUMNS

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 60, 170, 20, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
          "#7f7f7f", "#bcbd22", "#17becf")


class SchemaError(ValueError):
    pass


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, expected header {','.join(CSV_COLUMNS)}")
        for i, expected in enumerate(CSV_COLUMNS):
            got = header[i] if i < len(header) else None
            if got != expected:
                raise SchemaError(f"{path}: column {i} is {got!r}, expected {expected!r}")
        if len(header) > len(CSV_COLUMNS):
            raise SchemaError(f"{path}: unexpected extra column {header[len(CSV_COLUMNS)]!r}")
        return [dict(zip(CSV_COLUMNS, row)) for row in reader]


def default_label(path, rows: list[dict]) -> str:
    if not rows:
        return Path(path).stem
    r = rows[0]
    return f"{r['algo']} atoms={r['atoms']} shared={r['shared']} seed={r['seed']}"


def axis_transform(xlim, ylim):
    """Return ``f(x, y) -> (px, py)`` mapping data to SVG pixel coordinates."""
    (x0, x1), (y0, y1) = xlim, ylim
    pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def f(x, y):
        return (MARGIN_LEFT + (x - x0) / (x1 - x0) * pw,
                HEIGHT - MARGIN_BOTTOM - (y - y0) / (y1 - y0) * ph)
    return f


def _limits(values):
    lo, hi = min(values, default=0.0), max(values, default=1.0)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def emit_plot(csv_paths, output_path, labels=None, title: str = "") -> str:
    """Write one polyline per CSV (x = update, y = mean test reward); return the SVG text."""
    csv_paths = list(csv_paths)
    if not csv_paths:
        raise ValueError("need at least one metrics CSV")
    runs = [read_metrics(p) for p in csv_paths]
    labels = list(labels) if labels else [default_label(p, r) for p, r in zip(csv_paths, runs)]
    series = [[(float(r["update"]), float(r["mean_test_reward"])) for r in rows] for rows in runs]
    xlim = _limits([x for s in series for x, _ in s])
    ylim = _limits([y for s in series for _, y in s])
    to_px = axis_transform(xlim, ylim)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    bx0, by0 = to_px(xlim[0], ylim[0])
    bx1, by1 = to_px(xlim[1], ylim[1])
    out.append(f'<rect x="{bx0:.2f}" y="{by1:.2f}" width="{bx1 - bx0:.2f}" '
               f'height="{by0 - by1:.2f}" fill="none" stroke="black"/>')
    for k in range(5):
        xv = xlim[0] + (xlim[1] - xlim[0]) * k / 4
        yv = ylim[0] + (ylim[1] - ylim[0]) * k / 4
        px, _ = to_px(xv, ylim[0])
        _, py = to_px(xlim[0], yv)
        out.append(f'<text x="{px:.2f}" y="{by0 + 16:.2f}" font-size="11" '
                   f'text-anchor="middle">{xv:g}</text>')
        out.append(f'<text x="{bx0 - 6:.2f}" y="{py + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{yv:g}</text>')
    out.append(f'<text x="{(bx0 + bx1) / 2:.2f}" y="{HEIGHT - 12}" font-size="12" '
               f'text-anchor="middle">update</text>')
    out.append(f'<text x="14" y="{(by0 + by1) / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {(by0 + by1) / 2:.2f})">mean test reward</text>')
    if title:
        out.append(f'<text x="{(bx0 + bx1) / 2:.2f}" y="14" font-size="13" '
                   f'text-anchor="middle">{escape(title)}</text>')
    for i, (s, label) in enumerate(zip(series, labels)):
        color = COLORS[i % len(COLORS)]
        pts = " ".join("{:.2f},{:.2f}".format(*to_px(x, y)) for x, y in s)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN_TOP + 10 + 18 * i
        lx = WIDTH - MARGIN_RIGHT + 10
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="10">{escape(label)}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    Path(output_path).write_text(text)
    return text
