"""Tiny SVG writers for heatmaps and curve plots.

Heatmap colours use a two-colour linear ramp from ``LOW_COLOR`` (value at
``vmin``) to ``HIGH_COLOR`` (value at ``vmax``); missing cells are grey.
"""

from __future__ import annotations

import math
import os
from pathlib import Path
from xml.sax.saxutils import escape

LOW_COLOR = (44, 123, 182)
HIGH_COLOR = (215, 25, 28)
MISSING_COLOR = "#bbbbbb"
PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02")


def ramp(value, vmin, vmax) -> str:
    if value is None or not math.isfinite(value):
        return MISSING_COLOR
    t = min(1.0, max(0.0, (value - vmin) / (vmax - vmin)))
    r, g, b = (round(lo + t * (hi - lo)) for lo, hi in zip(LOW_COLOR, HIGH_COLOR))
    return f"#{r:02x}{g:02x}{b:02x}"


def _num(v) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


class Canvas:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.items = []

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.items.append(
            f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(w)}" height="{_num(h)}" '
            f'fill="{fill}" stroke="{stroke}"/>'
        )

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0):
        self.items.append(
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
            f'stroke="{stroke}" stroke-width="{width}"/>'
        )

    def polyline(self, pts, stroke, width=1.5):
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in pts)
        self.items.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{width}"/>'
        )

    def polygon(self, pts, fill, opacity=0.25):
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in pts)
        self.items.append(f'<polygon points="{coords}" fill="{fill}" fill-opacity="{opacity}"/>')

    def circle(self, x, y, r, fill, stroke="#000"):
        self.items.append(
            f'<circle cx="{_num(x)}" cy="{_num(y)}" r="{r}" fill="{fill}" stroke="{stroke}"/>'
        )

    def text(self, x, y, s, size=11, anchor="middle"):
        self.items.append(
            f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" font-family="sans-serif" '
            f'text-anchor="{anchor}">{escape(str(s))}</text>'
        )

    def render(self) -> str:
        body = "\n".join(self.items)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
        )


def write_atomic(path, text: str):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class Axes:
    def __init__(self, canvas, x0, y0, w, h, xlim, ylim):
        self.c, self.x0, self.y0, self.w, self.h = canvas, x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / (hi - lo) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (y - lo) / (hi - lo) * self.h

    def frame(self, xlabel="", ylabel="", ticks=5, size=11):
        c = self.c
        c.rect(self.x0, self.y0, self.w, self.h, "none", "#000")
        for i in range(ticks + 1):
            xv = self.xlim[0] + i * (self.xlim[1] - self.xlim[0]) / ticks
            yv = self.ylim[0] + i * (self.ylim[1] - self.ylim[0]) / ticks
            c.line(self.px(xv), self.y0 + self.h, self.px(xv), self.y0 + self.h + 4)
            c.text(self.px(xv), self.y0 + self.h + 15, _num(xv), size - 2)
            c.line(self.x0 - 4, self.py(yv), self.x0, self.py(yv))
            c.text(self.x0 - 6, self.py(yv) + 3, _num(yv), size - 2, "end")
        if xlabel:
            c.text(self.x0 + self.w / 2, self.y0 + self.h + 30, xlabel, size)
        if ylabel:
            c.text(self.x0 - 32, self.y0 + self.h / 2, ylabel, size)


def _edges(values):
    v = list(values)
    if len(v) == 1:
        return [v[0] - 0.5, v[0] + 0.5]
    mids = [(a + b) / 2 for a, b in zip(v, v[1:])]
    return [v[0] - (mids[0] - v[0])] + mids + [v[-1] + (v[-1] - mids[-1])]


def heatmap(h_values, eps_values, cells, vmin, vmax, title="", points=(), label="") -> str:
    """``cells[i][j]`` is the value at ``eps_values[i]``, ``h_values[j]``.

    Cell borders sit halfway between neighbouring grid values, so uneven grids
    are drawn to scale.
    """
    he, ee = _edges(h_values), _edges(eps_values)
    canvas = Canvas(640, 420)
    ax = Axes(canvas, 70, 40, 460, 320, (he[0], he[-1]), (ee[0], ee[-1]))
    for i in range(len(eps_values)):
        for j in range(len(h_values)):
            x0, x1 = ax.px(he[j]), ax.px(he[j + 1])
            y0, y1 = ax.py(ee[i + 1]), ax.py(ee[i])
            canvas.rect(x0, y0, x1 - x0 + 0.3, y1 - y0 + 0.3, ramp(cells[i][j], vmin, vmax))
    for h, eps in points:
        if he[0] <= h <= he[-1] and ee[0] <= eps <= ee[-1]:
            canvas.circle(ax.px(h), ax.py(eps), 4, "white")
    ax.frame("h", "eps")
    canvas.text(ax.x0 + ax.w / 2, 24, title, 13)
    for k in range(11):
        canvas.rect(560, ax.y0 + ax.h - (k + 1) * ax.h / 11, 20, ax.h / 11 + 0.3,
                    ramp(vmin + k / 10 * (vmax - vmin), vmin, vmax))
    canvas.text(590, ax.y0 + ax.h, _num(vmin), 9, "start")
    canvas.text(590, ax.y0 + 8, _num(vmax), 9, "start")
    if label:
        canvas.text(570, ax.y0 - 8, label, 10)
    return canvas.render()


def curve_plot(curves, title="", inset=None, ylabel="p_mbl") -> str:
    """Curves with +-s bands; ``inset`` is an optional list of (label, xs, ys) for a collapse."""
    canvas = Canvas(640, 440)
    hs = [h for c in curves for h in c.h]
    ax = Axes(canvas, 70, 40, 520, 340, (min(hs), max(hs)), (0.0, 1.0))
    for k, c in enumerate(curves):
        color = PALETTE[k % len(PALETTE)]
        pts = [(ax.px(p.h), ax.py(p.mean)) for p in c.points]
        band = [p for p in c.points if math.isfinite(p.std)]
        if len(band) >= 2:
            upper = [(ax.px(p.h), ax.py(min(1.0, p.mean + p.std))) for p in band]
            lower = [(ax.px(p.h), ax.py(max(0.0, p.mean - p.std))) for p in reversed(band)]
            canvas.polygon(upper + lower, color)
        canvas.polyline(pts, color)
        canvas.text(ax.x0 + 20, ax.y0 + 16 + 14 * k, f"N={c.n_sites}", 10, "start")
        canvas.line(ax.x0 + 4, ax.y0 + 12 + 14 * k, ax.x0 + 16, ax.y0 + 12 + 14 * k, color, 2)
    ax.frame("h", ylabel)
    canvas.text(ax.x0 + ax.w / 2, 24, title, 13)
    if inset:
        xs = [x for _, xx, _ in inset for x in xx]
        if xs:
            sub = Axes(canvas, 380, 200, 190, 140, (min(xs), max(xs)), (0.0, 1.0))
            canvas.rect(sub.x0, sub.y0, sub.w, sub.h, "white", "#000")
            for k, (_, xx, yy) in enumerate(inset):
                canvas.polyline([(sub.px(x), sub.py(y)) for x, y in zip(xx, yy)],
                                PALETTE[k % len(PALETTE)], 1.2)
            sub.frame("N^(1/nu) (h - h_c)", "", ticks=2, size=9)
    return canvas.render()
