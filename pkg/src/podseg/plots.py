"""Static SVG bar charts for evaluation reports.

The SVG is assembled as text with fixed number formatting so identical
inputs give byte-identical files.
"""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape


def bar_chart_svg(title: str, labels: Sequence[str], values: Sequence[float], y_label: str = "",
                  bar_width: int = 28, height: int = 260) -> str:
    if len(labels) != len(values):
        raise ValueError("labels and values differ in length")
    left, right, top, bottom = 56, 16, 36, 96
    gap = 8
    plot_w = max(1, len(values)) * (bar_width + gap) + gap
    plot_h = height - top - bottom
    width = left + plot_w + right
    vmax = max([float(v) for v in values] + [0.0])
    scale = plot_h / vmax if vmax > 0 else 0.0

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="#333"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="#333"/>',
        f'<text x="{left - 6}" y="{top + 4}" text-anchor="end">{vmax:.1f}</text>',
        f'<text x="{left - 6}" y="{top + plot_h + 4}" text-anchor="end">0</text>',
    ]
    if y_label:
        out.append(f'<text x="14" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + plot_h / 2:.1f})">{escape(y_label)}</text>')
    for i, (label, value) in enumerate(zip(labels, values)):
        x = left + gap + i * (bar_width + gap)
        h = float(value) * scale
        y = top + plot_h - h
        cx = x + bar_width / 2
        out.append(f'<rect x="{x}" y="{y:.2f}" width="{bar_width}" height="{h:.2f}" fill="#4878a8"/>')
        out.append(f'<text x="{cx:.1f}" y="{y - 3:.2f}" text-anchor="middle" font-size="9">{float(value):.1f}</text>')
        ly = top + plot_h + 10
        out.append(f'<text x="{cx:.1f}" y="{ly}" text-anchor="end" '
                   f'transform="rotate(-60 {cx:.1f} {ly})">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
