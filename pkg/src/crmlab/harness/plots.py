"""Per-panel plot data (CSV) and a dependency-free SVG rendering."""
from __future__ import annotations

import csv
import math
import warnings
from pathlib import Path
from xml.sax.saxutils import escape

from ..errors import DataError
from .experiment import FIGURES, ExperimentResult, _fmt

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
PANEL_W, PANEL_H = 320, 240
MARGIN = dict(left=56, right=16, top=32, bottom=44)


class PartialDataWarning(UserWarning):
    """Some (environment, size, method) cells have no aggregate."""


def _panels(result: ExperimentResult):
    envs, sizes, methods = [], set(), []
    for row in result.aggregates:
        if row.environment not in envs:
            envs.append(row.environment)
        if row.method not in methods:
            methods.append(row.method)
        sizes.add(row.size)
    return envs, sorted(sizes), methods


def panel_path(out_dir, figure: str, environment: str) -> Path:
    return Path(out_dir) / f"figure_{figure}_{environment}.csv"


def emit_plot_data(result: ExperimentResult, figure: str, out_dir=None) -> list[Path]:
    """Write one CSV per environment panel plus ``figure_<figure>.svg``; returns the paths."""
    if figure not in FIGURES:
        raise DataError(f"figure must be one of {FIGURES}")
    if not result.aggregates:
        raise DataError("no results to plot")
    if out_dir is None:
        if result.spec is None:
            raise DataError("no output directory given")
        out_dir = result.spec.output_dir
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    envs, sizes, methods = _panels(result)
    index = {(r.environment, r.size, r.method): r for r in result.aggregates}
    gaps = [(e, s, m) for e in envs for s in sizes for m in methods if (e, s, m) not in index]
    if gaps:
        warnings.warn(f"partial plot data; missing cells: {gaps}", PartialDataWarning, stacklevel=2)

    written = []
    for env in envs:
        path = panel_path(out_dir, figure, env)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["size", "method", "mean_exp", "std", "significant", "n_runs"])
            for method in methods:
                for size in sizes:
                    row = index.get((env, size, method))
                    if row is not None:
                        w.writerow([size, method, _fmt(row.mean), _fmt(row.std), int(row.significant), row.n_runs])
        written.append(path)
    svg = out_dir / f"figure_{figure}.svg"
    svg.write_text(render_svg(index, envs, sizes, methods), encoding="utf-8")
    written.append(svg)
    return written


def _nice_range(lo: float, hi: float) -> tuple[float, float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi - lo < 1e-9:
        lo, hi = lo - 0.05, hi + 0.05
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _panel_svg(index, env, sizes, methods, x0) -> list[str]:
    left, top = x0 + MARGIN["left"], MARGIN["top"]
    width = PANEL_W - MARGIN["left"] - MARGIN["right"]
    height = PANEL_H - MARGIN["top"] - MARGIN["bottom"]
    rows = [index[(env, s, m)] for m in methods for s in sizes if (env, s, m) in index]
    lows = [r.mean - (r.std if math.isfinite(r.std) else 0.0) for r in rows if math.isfinite(r.mean)]
    highs = [r.mean + (r.std if math.isfinite(r.std) else 0.0) for r in rows if math.isfinite(r.mean)]
    y_lo, y_hi = _nice_range(min(lows, default=0.0), max(highs, default=1.0))

    def sx(i):
        return left + (width / 2 if len(sizes) == 1 else width * i / (len(sizes) - 1))

    def sy(v):
        return top + height * (1.0 - (v - y_lo) / (y_hi - y_lo))

    parts = [
        f'<g class="panel" data-environment="{escape(env)}">',
        f'<text x="{left + width / 2:.1f}" y="{top - 12}" text-anchor="middle" font-size="13">{escape(env)}</text>',
        f'<rect x="{left}" y="{top}" width="{width}" height="{height}" fill="none" stroke="#444"/>',
    ]
    for j in range(5):
        v = y_lo + (y_hi - y_lo) * j / 4
        parts.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end" font-size="10">{v:.3f}</text>')
    for i, size in enumerate(sizes):
        label = f"{size // 1000}k" if size % 1000 == 0 else str(size)
        parts.append(f'<text x="{sx(i):.1f}" y="{top + height + 16}" text-anchor="middle" font-size="10">{label}</text>')
    parts.append(f'<text x="{left + width / 2:.1f}" y="{top + height + 34}" text-anchor="middle" font-size="11">dataset size</text>')
    for m_i, method in enumerate(methods):
        color = PALETTE[m_i % len(PALETTE)]
        pts = [(i, index[(env, s, method)]) for i, s in enumerate(sizes)
               if (env, s, method) in index and math.isfinite(index[(env, s, method)].mean)]
        if not pts:
            continue
        upper = [(sx(i), sy(r.mean + (r.std if math.isfinite(r.std) else 0.0))) for i, r in pts]
        lower = [(sx(i), sy(r.mean - (r.std if math.isfinite(r.std) else 0.0))) for i, r in pts]
        band = " ".join(f"{x:.1f},{y:.1f}" for x, y in upper + lower[::-1])
        line = " ".join(f"{sx(i):.1f},{sy(r.mean):.1f}" for i, r in pts)
        parts.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        for i, r in pts:
            fill = color if r.significant else "#ffffff"
            parts.append(
                f'<circle cx="{sx(i):.1f}" cy="{sy(r.mean):.1f}" r="3.5" fill="{fill}" stroke="{color}" '
                f'data-method="{escape(method)}" data-size="{r.size}" data-significant="{int(r.significant)}"/>'
            )
    parts.append("</g>")
    return parts


def render_svg(index, envs, sizes, methods) -> str:
    legend_h = 18 * len(methods) + 12
    total_w = PANEL_W * len(envs)
    total_h = PANEL_H + legend_h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" '
        f'viewBox="0 0 {total_w} {total_h}" font-family="sans-serif">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="14" y="{PANEL_H / 2:.0f}" font-size="11" transform="rotate(-90 14 {PANEL_H / 2:.0f})" '
        'text-anchor="middle">EXP</text>',
    ]
    for p, env in enumerate(envs):
        parts.extend(_panel_svg(index, env, sizes, methods, p * PANEL_W))
    for m_i, method in enumerate(methods):
        y = PANEL_H + 12 + 18 * m_i
        color = PALETTE[m_i % len(PALETTE)]
        parts.append(f'<line x1="{MARGIN["left"]}" y1="{y}" x2="{MARGIN["left"] + 24}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{MARGIN["left"] + 30}" y="{y + 4}" font-size="11">{escape(method)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
