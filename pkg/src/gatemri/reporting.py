"""Merge evaluation CSVs from several runs and render a comparison chart.

The chart is a hand-written SVG grouped bar chart (no rendering
dependencies, diffs as text): one bar group per method, one bar per metric,
heights normalized per metric, best value per metric starred.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .metrics import MetricsReport, read_metrics_csv

HIGHER_BETTER = {"psnr": True, "ssim_slice": True, "ssim_vol": True,
                 "nmse": False, "rmse": False}

_COLORS = ("#4878a8", "#e49444", "#5fa052", "#b65fa0", "#a87848")


class ComparisonError(ValueError):
    pass


def compare_runs(csv_paths, out_dir, labels=None):
    """Merge >= 2 metric CSVs; returns (merged csv path, svg path).

    All runs must cover the identical list of volume ids.
    """
    csv_paths = [Path(p) for p in csv_paths]
    if len(csv_paths) < 2:
        raise ComparisonError("compare needs at least two evaluation CSVs")
    if labels is None:
        labels = [p.stem for p in csv_paths]
    runs = []
    for path in csv_paths:
        rows, average = read_metrics_csv(path)
        runs.append({"rows": rows, "average": average})
    base_ids = [r["volume"] for r in runs[0]["rows"]]
    for label, run in zip(labels, runs):
        ids = [r["volume"] for r in run["rows"]]
        if ids != base_ids:
            raise ComparisonError(
                f"run {label!r} evaluates volumes {ids}, expected {base_ids}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    merged_path = out_dir / "comparison.csv"
    with open(merged_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("method", "volume") + MetricsReport.METRIC_NAMES)
        for label, run in zip(labels, runs):
            for row in run["rows"] + [run["average"]]:
                writer.writerow([label, row["volume"]] +
                                [repr(row[m]) for m in MetricsReport.METRIC_NAMES])

    averages = {label: run["average"] for label, run in zip(labels, runs)}
    svg_path = out_dir / "comparison.svg"
    svg_path.write_text(render_chart(averages), encoding="utf-8")
    return merged_path, svg_path


def best_method(averages: dict, metric: str) -> str:
    pick = max if HIGHER_BETTER[metric] else min
    return pick(averages, key=lambda label: averages[label][metric])


def render_chart(averages: dict) -> str:
    """Grouped bar chart of per-method average metrics as an SVG string."""
    methods = list(averages)
    names = MetricsReport.METRIC_NAMES
    bar_w, gap, group_gap = 26, 6, 40
    group_w = len(names) * (bar_w + gap) - gap
    margin_l, margin_t, plot_h = 60, 40, 180
    width = margin_l + len(methods) * (group_w + group_gap) + 20
    height = margin_t + plot_h + 80

    maxima = {}
    for m in names:
        finite = [abs(averages[label][m]) for label in methods
                  if math.isfinite(averages[label][m])]
        maxima[m] = max(finite) if finite else 1.0
        maxima[m] = maxima[m] or 1.0
    best = {m: best_method(averages, m) for m in names}

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<style>text { font-family: monospace; font-size: 11px; }</style>',
        f'<line x1="{margin_l - 8}" y1="{margin_t + plot_h}" x2="{width - 10}" '
        f'y2="{margin_t + plot_h}" stroke="#444"/>',
    ]
    for gi, label in enumerate(methods):
        gx = margin_l + gi * (group_w + group_gap)
        parts.append(f'<g class="method" id="method-{escape(label)}">')
        for mi, metric in enumerate(names):
            value = averages[label][metric]
            frac = 1.0 if not math.isfinite(value) else min(abs(value) / maxima[metric], 1.0)
            bh = max(plot_h * frac, 1.0)
            x = gx + mi * (bar_w + gap)
            y = margin_t + plot_h - bh
            stroke = ' stroke="#222" stroke-width="2"' if best[metric] == label else ""
            parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w}" height="{bh:.1f}" '
                         f'fill="{_COLORS[mi % len(_COLORS)]}"{stroke}/>')
            shown = f"{value:.4g}" + ("*" if best[metric] == label else "")
            parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{y - 4:.1f}" '
                         f'text-anchor="middle">{escape(shown)}</text>')
            parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{margin_t + plot_h + 14}" '
                         f'text-anchor="middle" transform="rotate(45 {x + bar_w / 2:.1f} '
                         f'{margin_t + plot_h + 14})">{escape(metric)}</text>')
        parts.append(f'<text x="{gx + group_w / 2:.1f}" y="{margin_t + plot_h + 64}" '
                     f'text-anchor="middle" font-weight="bold">{escape(label)}</text>')
        parts.append('</g>')
    parts.append('</svg>')
    return "\n".join(parts)
