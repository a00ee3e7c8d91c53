"""CSV/JSON emitters and a tiny dependency-free SVG bar chart."""

from __future__ import annotations

import csv
import io
import json
from xml.sax.saxutils import escape


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def to_json(columns, rows) -> str:
    return json.dumps([{c: r.get(c) for c in columns} for r in rows], indent=2) + "\n"


def emit(columns, rows, fmt: str = "csv") -> str:
    return to_json(columns, rows) if fmt == "json" else to_csv(columns, rows)


def bar_chart_svg(labels, values, title: str = "", y_label: str = "", width: int = 480, height: int = 300) -> str:
    """Vertical bar chart; values must be non-negative."""
    left, right, top, bottom = 60, 16, 32, 40
    plot_w = width - left - right
    plot_h = height - top - bottom
    vmax = max(values, default=0.0) or 1.0
    n = max(len(values), 1)
    slot = plot_w / n
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<text x="14" y="{top + plot_h / 2:.1f}" font-size="11" transform="rotate(-90 14 {top + plot_h / 2:.1f})" '
        f'text-anchor="middle">{escape(y_label)}</text>',
        f'<text x="{left - 4}" y="{top + 4}" font-size="10" text-anchor="end">{vmax:.3g}</text>',
    ]
    for i, (lab, v) in enumerate(zip(labels, values)):
        h = plot_h * v / vmax
        x = left + i * slot + slot * 0.15
        out.append(
            f'<rect x="{x:.1f}" y="{top + plot_h - h:.1f}" width="{slot * 0.7:.1f}" height="{h:.1f}" fill="#4a78b5"/>'
        )
        out.append(
            f'<text x="{x + slot * 0.35:.1f}" y="{top + plot_h + 14}" font-size="10" text-anchor="middle">{escape(str(lab))}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
