"""Dependency-free SVG writers for ROC curves and 2-D scatter plots.

Both plots use a 480x480 canvas with a 60px margin.  Axis labels are plain
``<text>`` elements (ids ``xlabel``/``ylabel``/``title``) and data live in a
``<g id="data">`` group, which keeps the files diffable and easy to inspect in
tests.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

SIZE = 480
MARGIN = 60
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def _frame(title, xlabel, ylabel, body, comment=""):
    inner = SIZE - 2 * MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
    ]
    if comment:
        parts.append(f"<!-- {escape(comment)} -->")
    parts += [
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}" fill="none" stroke="black"/>',
        f'<text id="title" x="{SIZE / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<text id="xlabel" x="{SIZE / 2}" y="{SIZE - MARGIN / 3}" text-anchor="middle" font-size="14">{escape(xlabel)}</text>',
        f'<text id="ylabel" x="{MARGIN / 3}" y="{SIZE / 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 {MARGIN / 3} {SIZE / 2})">{escape(ylabel)}</text>',
        '<g id="data">',
        *body,
        "</g>",
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def _to_px(u, v):
    inner = SIZE - 2 * MARGIN
    return MARGIN + u * inner, SIZE - MARGIN - v * inner


def roc_svg(fpr, tpr, auroc: float, comment: str = "") -> str:
    pts = " ".join("{:.2f},{:.2f}".format(*_to_px(f, t)) for f, t in zip(fpr, tpr))
    x0, y0 = _to_px(0, 0)
    x1, y1 = _to_px(1, 1)
    body = [
        f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" stroke="#999" stroke-dasharray="4 4"/>',
        f'<polyline points="{pts}" fill="none" stroke="{PALETTE[0]}" stroke-width="2"/>',
    ]
    return _frame(f"ROC (AUROC = {auroc:.4f})", "FPR", "TPR", body, comment)


def scatter_svg(coords, labels, class_names=None, title: str = "2-D projection", comment: str = "") -> str:
    xy = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    unit = (xy - lo) / span
    body = []
    for (u, v), lab in zip(unit, labels):
        px, py = _to_px(u, v)
        body.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.5" fill="{PALETTE[int(lab) % len(PALETTE)]}"/>')
    for i, c in enumerate(np.unique(labels)):
        name = class_names[int(c)] if class_names is not None else str(c)
        y = MARGIN + 14 * (i + 1)
        body.append(f'<text x="{SIZE - MARGIN - 4}" y="{y}" text-anchor="end" font-size="11" '
                    f'fill="{PALETTE[int(c) % len(PALETTE)]}">{escape(str(name))}</text>')
    return _frame(title, "component 1", "component 2", body, comment)
