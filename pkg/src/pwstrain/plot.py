"""Dependency-free line plots rendered to PPM, with a sidecar legend."""

from __future__ import annotations

import numpy as np

from .io import _fmt, write_rgb, write_text

PALETTE = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (148, 103, 189), (255, 127, 14), (23, 190, 207)]


def _segment(img, p0, p1, color):
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 1
    rows = np.rint(np.linspace(p0[0], p1[0], n)).astype(int)
    cols = np.rint(np.linspace(p0[1], p1[1], n)).astype(int)
    h, w, _ = img.shape
    for dr in (0, 1):
        r = np.clip(rows + dr, 0, h - 1)
        img[r, np.clip(cols, 0, w - 1)] = color


def line_plot(path, series: dict, xlabel: str, ylabel: str, size=(400, 640), margin=40):
    """Plot ``{label: (xs, ys)}``; non-finite points break the line."""
    h, w = size
    img = np.full((h, w, 3), 255, np.uint8)
    xs_all = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys_all = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    ys_fin = ys_all[np.isfinite(ys_all)]
    if xs_all.size == 0 or ys_fin.size == 0:
        raise ValueError("nothing to plot")
    x0, x1 = xs_all.min(), xs_all.max()
    y0, y1 = ys_fin.min(), ys_fin.max()
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x, y):
        return (h - margin - (y - y0) / (y1 - y0) * (h - 2 * margin),
                margin + (x - x0) / (x1 - x0) * (w - 2 * margin))

    black = (0, 0, 0)
    for a, b in [((x0, y0), (x1, y0)), ((x0, y0), (x0, y1)), ((x1, y0), (x1, y1)), ((x0, y1), (x1, y1))]:
        _segment(img, px(*a), px(*b), black)
    legend = [f"x = {xlabel} [{_fmt(x0)}, {_fmt(x1)}]", f"y = {ylabel} [{_fmt(y0)}, {_fmt(y1)}]"]
    for k, (label, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = [px(x, y) if np.isfinite(y) else None for x, y in zip(xs, ys)]
        for a, b in zip(pts[:-1], pts[1:]):
            if a is not None and b is not None:
                _segment(img, a, b, color)
        for p in pts:
            if p is not None:
                r, c = int(round(p[0])), int(round(p[1]))
                img[max(r - 2, 0):r + 3, max(c - 2, 0):c + 3] = color
        legend.append(f"series {label} = rgb{color}")
    write_rgb(path, img)
    write_text(str(path) + ".txt", "\n".join(legend) + "\n")
