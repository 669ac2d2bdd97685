"""Reports and deterministic SVG plots.

Reports hold per-scene rows plus aggregates recomputed from those rows; the
writers emit byte-stable JSON/CSV (no timestamps, canonical key order) and
hand-rolled SVG charts whose data points carry ``data-value`` attributes so
plotted numbers can be read back and checked against the report.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FMT = "{:.6f}"


@dataclass
class Report:
    metadata: dict
    rows: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    buckets: dict = field(default_factory=dict)
    gap_rows: list[dict] = field(default_factory=list)
    gap_summary: dict = field(default_factory=dict)
    curve: list[dict] = field(default_factory=list)
    traces: list[dict] = field(default_factory=list)


def aggregate_rows(rows: list[dict],
                   motion_buckets: tuple[float, ...] | None = None
                   ) -> tuple[dict, dict]:
    """Per-scheduler aggregates and motion-bucketed means from raw rows."""
    schedulers = sorted({r["scheduler"] for r in rows})
    aggregates: dict = {}
    buckets: dict = {}
    for s in schedulers:
        sub = [r for r in rows if r["scheduler"] == s]
        dyn = [r for r in sub if not r["static"]]
        agg = {
            "n": len(sub),
            "mean_psnr_mu": float(np.mean([r["psnr_mu"] for r in sub])),
            "mean_frames": float(np.mean([r["frames"] for r in sub])),
            "dynamic_n": len(dyn),
        }
        if dyn:
            agg["dynamic_mean_psnr_mu"] = float(np.mean([r["psnr_mu"] for r in dyn]))
        if all("ssim_mu" in r for r in sub) and sub:
            agg["mean_ssim_mu"] = float(np.mean([r["ssim_mu"] for r in sub]))
            if dyn:
                agg["dynamic_mean_ssim_mu"] = float(
                    np.mean([r["ssim_mu"] for r in dyn]))
        aggregates[s] = agg
        if motion_buckets:
            edges = list(motion_buckets)
            blist = []
            zero = [r for r in sub if r["motion"] == 0.0]
            blist.append({"lo": 0.0, "hi": 0.0, "n": len(zero),
                          "mean_psnr_mu": (float(np.mean([r["psnr_mu"] for r in zero]))
                                           if zero else None)})
            for lo, hi in zip(edges[:-1], edges[1:]):
                grp = [r for r in sub if lo < r["motion"] <= hi]
                blist.append({"lo": lo, "hi": hi, "n": len(grp),
                              "mean_psnr_mu": (float(np.mean([r["psnr_mu"] for r in grp]))
                                               if grp else None)})
            buckets[s] = blist
    return aggregates, buckets


def write_report_json(report: Report, path) -> None:
    payload = {
        "metadata": report.metadata,
        "rows": report.rows,
        "aggregates": report.aggregates,
        "buckets": report.buckets,
        "gap_rows": report.gap_rows,
        "gap_summary": report.gap_summary,
        "curve": report.curve,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_report_json(path) -> Report:
    data = json.loads(Path(path).read_text())
    return Report(metadata=data["metadata"], rows=data["rows"],
                  aggregates=data["aggregates"], buckets=data["buckets"],
                  gap_rows=data.get("gap_rows", []),
                  gap_summary=data.get("gap_summary", {}),
                  curve=data.get("curve", []))


def write_rows_csv(rows: list[dict], path, columns: list[str]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for c in columns:
            v = row.get(c, "")
            cells.append(FMT.format(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_curve_csv(curve: list[dict], path) -> None:
    if not curve:
        Path(path).write_text("epoch\n")
        return
    columns = list(curve[0].keys())
    write_rows_csv(curve, path, columns)


# -- SVG ---------------------------------------------------------------------

_SVG_HEAD = ('<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             'viewBox="0 0 {w} {h}">\n'
             '<rect width="{w}" height="{h}" fill="white"/>\n')

_PALETTE = ("#1b6ca8", "#d1495b", "#66a182", "#edae49", "#8d6b94", "#2e4057")


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def bar_chart_svg(title: str, labels: list[str], values: list[float],
                  path, unit: str = "dB") -> None:
    """Deterministic bar chart; each bar carries its value as data-value."""
    w, h, margin = 640, 360, 60
    vmax = max(values) if values else 1.0
    vmin = min(0.0, min(values) if values else 0.0)
    span = (vmax - vmin) or 1.0
    bar_w = (w - 2 * margin) / max(1, len(values))
    parts = [_SVG_HEAD.format(w=w, h=h)]
    parts.append(f'<text x="{w//2}" y="24" text-anchor="middle" '
                 f'font-size="16">{_esc(title)}</text>\n')
    for i, (label, value) in enumerate(zip(labels, values)):
        x = margin + i * bar_w
        bh = (value - vmin) / span * (h - 2 * margin)
        y = h - margin - bh
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(
            f'<rect class="datum" data-series="{_esc(label)}" '
            f'data-value="{FMT.format(value)}" x="{x + 4:.1f}" y="{y:.1f}" '
            f'width="{bar_w - 8:.1f}" height="{bh:.1f}" fill="{color}"/>\n')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{y - 6:.1f}" '
                     f'text-anchor="middle" font-size="11">'
                     f'{FMT.format(value)}</text>\n')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{h - margin + 16}" '
                     f'text-anchor="middle" font-size="11">{_esc(label)}</text>\n')
    parts.append(f'<text x="16" y="{h//2}" font-size="11" '
                 f'transform="rotate(-90 16 {h//2})">{_esc(unit)}</text>\n')
    parts.append("</svg>\n")
    Path(path).write_text("".join(parts))


def line_chart_svg(title: str, series: dict[str, list[tuple[str, float | None]]],
                   path, unit: str = "dB") -> None:
    """Deterministic multi-series line chart.

    ``series`` maps a name to (x-label, value) pairs; None values mark empty
    buckets, which are omitted from the polyline and noted in the legend.
    """
    w, h, margin = 640, 360, 60
    all_vals = [v for pts in series.values() for _, v in pts if v is not None]
    vmax = max(all_vals) if all_vals else 1.0
    vmin = min(all_vals) if all_vals else 0.0
    if vmax == vmin:
        vmax += 1.0
    n_x = max(len(pts) for pts in series.values()) if series else 1
    xstep = (w - 2 * margin) / max(1, n_x - 1)
    parts = [_SVG_HEAD.format(w=w, h=h)]
    parts.append(f'<text x="{w//2}" y="24" text-anchor="middle" '
                 f'font-size="16">{_esc(title)}</text>\n')

    def ypix(v):
        return h - margin - (v - vmin) / (vmax - vmin) * (h - 2 * margin)

    x_labels = next(iter(series.values()), [])
    for i, (xl, _v) in enumerate(x_labels):
        parts.append(f'<text x="{margin + i * xstep:.1f}" y="{h - margin + 16}" '
                     f'text-anchor="middle" font-size="11">{_esc(xl)}</text>\n')
    for si, (name, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[si % len(_PALETTE)]
        coords = [(margin + i * xstep, ypix(v))
                  for i, (_xl, v) in enumerate(pts) if v is not None]
        if coords:
            poly = " ".join(f"{x:.1f},{y:.1f}" for x, y in coords)
            parts.append(f'<polyline points="{poly}" fill="none" '
                         f'stroke="{color}" stroke-width="2"/>\n')
        for i, (xl, v) in enumerate(pts):
            if v is None:
                continue
            parts.append(
                f'<circle class="datum" data-series="{_esc(name)}" '
                f'data-x="{_esc(xl)}" data-value="{FMT.format(v)}" '
                f'cx="{margin + i * xstep:.1f}" cy="{ypix(v):.1f}" r="3" '
                f'fill="{color}"/>\n')
        missing = sum(1 for _xl, v in pts if v is None)
        legend = name if missing == 0 else f"{name} ({missing} empty omitted)"
        parts.append(f'<text x="{w - margin + 4}" y="{margin + 14 * si}" '
                     f'font-size="11" fill="{color}" text-anchor="end" '
                     f'x="{w - 8}">{_esc(legend)}</text>\n')
    parts.append(f'<text x="16" y="{h//2}" font-size="11" '
                 f'transform="rotate(-90 16 {h//2})">{_esc(unit)}</text>\n')
    parts.append("</svg>\n")
    Path(path).write_text("".join(parts))


_DATUM_RE = re.compile(
    r'class="datum" data-series="([^"]*)"(?: data-x="([^"]*)")? '
    r'data-value="([^"]*)"')


def read_svg_values(path) -> list[tuple[str, str | None, float]]:
    """Extract (series, x-label, value) triples back out of a plot file."""
    out = []
    for match in _DATUM_RE.finditer(Path(path).read_text()):
        series, xl, value = match.groups()
        out.append((series, xl, float(value)))
    return out
