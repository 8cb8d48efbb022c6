"""Plain SVG drawing of 2-D ball unions, the goal and optional start sets.

Shapes carry ``data-*`` attributes with their state-space geometry, and the
root element records the view window and plot area, so a figure can be read
back without knowing the pixel mapping.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .backreach import BackreachResult
from .milp import ModelError, NormBall, Polytope

WIDTH = 640
HEIGHT = 560
MARGIN = (64, 24, 24, 56)  # left, top, right, bottom
# t = 1 (early) to t = k (late): dark blue through teal to yellow
RAMP = ["#3b0f70", "#2c728e", "#28ae80", "#addc30", "#fde725"]


class PlotError(ModelError):
    pass


@dataclass
class PlotSpec:
    steps: Sequence[int] | None = None
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None
    start_sets: list[tuple[str, Polytope]] = field(default_factory=list)
    title: str = ""


def color_for(t: int, k: int) -> str:
    if k <= 1:
        return RAMP[0]
    u = (t - 1) / (k - 1) * (len(RAMP) - 1)
    i = min(int(u), len(RAMP) - 2)
    f = u - i
    a = [int(RAMP[i][j:j + 2], 16) for j in (1, 3, 5)]
    b = [int(RAMP[i + 1][j:j + 2], 16) for j in (1, 3, 5)]
    return "#" + "".join(f"{round(x + f * (y - x)):02x}" for x, y in zip(a, b))


def clip_polygon(P: Polytope, lo, hi) -> list[tuple[float, float]]:
    """Vertices of ``P`` intersected with the box, by successive half-plane clipping."""
    poly = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
    for a, b in zip(P.A, P.b):
        out = []
        for i, cur in enumerate(poly):
            prev = poly[i - 1]
            fc = a[0] * cur[0] + a[1] * cur[1] - b
            fp = a[0] * prev[0] + a[1] * prev[1] - b
            if fc <= 0:
                if fp > 0:
                    out.append(_cross(prev, cur, fp, fc))
                out.append(cur)
            elif fp <= 0:
                out.append(_cross(prev, cur, fp, fc))
        poly = out
        if not poly:
            break
    return poly


def _cross(p, q, fp, fq):
    s = fp / (fp - fq)
    return (p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1]))


def nice_ticks(a: float, b: float, target: int = 6) -> list[float]:
    span = b - a
    if span <= 0:
        return [a]
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(a / step - 1e-9) * step
    ticks = []
    v = first
    while v <= b + 1e-9 * span:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".") if abs(v) < 1e6 else f"{v:.4g}"


class _Frame:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        left, top, right, bottom = MARGIN
        self.left, self.top = left, top
        self.w = WIDTH - left - right
        self.h = HEIGHT - top - bottom

    def px(self, x: float) -> float:
        return self.left + (x - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y: float) -> float:
        return self.top + (self.y1 - y) / (self.y1 - self.y0) * self.h


def _points(frame: _Frame, pts) -> str:
    return " ".join(f"{frame.px(x):.3f},{frame.py(y):.3f}" for x, y in pts)


def ball_vertices(ball: NormBall) -> list[tuple[float, float]]:
    cx, cy = (float(v) for v in ball.center)
    r = ball.radius
    if ball.p == math.inf:
        return [(cx - r, cy - r), (cx + r, cy - r), (cx + r, cy + r), (cx - r, cy + r)]
    return [(cx + r, cy), (cx, cy + r), (cx - r, cy), (cx, cy - r)]


def render_svg(result: BackreachResult, spec: PlotSpec | None = None) -> str:
    spec = spec or PlotSpec()
    if result.dim != 2:
        raise PlotError(f"plot requires 2-D states; result has dimension {result.dim}")
    lo, hi = result.domain
    xlim = spec.xlim or (float(lo[0]), float(hi[0]))
    ylim = spec.ylim or (float(lo[1]), float(hi[1]))
    if not (xlim[1] > xlim[0] and ylim[1] > ylim[0]):
        raise PlotError(f"empty axis range x={xlim} y={ylim}")
    k = len(result.steps)
    steps = list(spec.steps) if spec.steps is not None else [s.t for s in result.steps]
    bad = [t for t in steps if not 1 <= t <= k]
    if bad:
        raise PlotError(f"steps {bad} are outside 1..{k}")
    f = _Frame(xlim, ylim)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" data-view="{xlim[0]!r} {xlim[1]!r} {ylim[0]!r} '
           f'{ylim[1]!r}" data-plot="{f.left} {f.top} {f.w} {f.h}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<clipPath id="area"><rect x="{f.left}" y="{f.top}" width="{f.w}" '
           f'height="{f.h}"/></clipPath>']
    # axes and ticks
    out.append('<g class="axes" stroke="#333" fill="none" font-family="sans-serif" '
               'font-size="11">')
    out.append(f'<rect x="{f.left}" y="{f.top}" width="{f.w}" height="{f.h}"/>')
    for v in nice_ticks(*xlim):
        x = f.px(v)
        out.append(f'<line x1="{x:.3f}" y1="{f.top + f.h}" x2="{x:.3f}" y2="{f.top + f.h + 5}"/>')
        out.append(f'<text x="{x:.3f}" y="{f.top + f.h + 18}" text-anchor="middle" '
                   f'stroke="none" fill="#333">{_fmt(v)}</text>')
    for v in nice_ticks(*ylim):
        y = f.py(v)
        out.append(f'<line x1="{f.left - 5}" y1="{y:.3f}" x2="{f.left}" y2="{y:.3f}"/>')
        out.append(f'<text x="{f.left - 8}" y="{y + 4:.3f}" text-anchor="end" stroke="none" '
                   f'fill="#333">{_fmt(v)}</text>')
    out.append(f'<text x="{f.left + f.w / 2}" y="{HEIGHT - 12}" text-anchor="middle" '
               f'stroke="none" fill="#333">x1</text>')
    out.append(f'<text x="16" y="{f.top + f.h / 2}" text-anchor="middle" stroke="none" '
               f'fill="#333" transform="rotate(-90 16 {f.top + f.h / 2})">x2</text>')
    out.append("</g>")

    out.append('<g clip-path="url(#area)">')
    goal = clip_polygon(result.goal, (xlim[0], ylim[0]), (xlim[1], ylim[1]))
    if goal:
        out.append(f'<polygon class="goal" points="{_points(f, goal)}" fill="#d62728" '
                   f'fill-opacity="0.25" stroke="#d62728" stroke-width="1.5"/>')
    # late steps first so early (smaller) sets stay visible on top
    for t in sorted(steps, reverse=True):
        col = color_for(t, k)
        for j, ball in enumerate(result.balls(t)):
            cx, cy = (float(v) for v in ball.center)
            data = (f'data-t="{t}" data-index="{j}" data-cx="{cx!r}" data-cy="{cy!r}" '
                    f'data-r="{ball.radius!r}" data-p="{"inf" if ball.p == math.inf else 1}"')
            if ball.p == math.inf:
                x, y = f.px(cx - ball.radius), f.py(cy + ball.radius)
                w = f.px(cx + ball.radius) - x
                h = f.py(cy - ball.radius) - y
                out.append(f'<rect class="ball" {data} x="{x:.3f}" y="{y:.3f}" width="{w:.3f}" '
                           f'height="{h:.3f}" fill="{col}" fill-opacity="0.45" stroke="{col}"/>')
            else:
                out.append(f'<polygon class="ball" {data} points="{_points(f, ball_vertices(ball))}" '
                           f'fill="{col}" fill-opacity="0.45" stroke="{col}"/>')
    for name, P in spec.start_sets:
        pts = clip_polygon(P, (xlim[0], ylim[0]), (xlim[1], ylim[1]))
        if pts:
            out.append(f'<polygon class="start-set" data-name={quoteattr(name)} '
                       f'points="{_points(f, pts)}" fill="none" stroke="black" '
                       f'stroke-width="1.5" stroke-dasharray="5,3"/>')
    out.append("</g>")

    # legend
    out.append('<g class="legend" font-family="sans-serif" font-size="11">')
    lx, ly = f.left + f.w - 70, f.top + 8
    for i, t in enumerate(sorted(steps)):
        y = ly + 16 * i
        out.append(f'<rect x="{lx}" y="{y}" width="12" height="12" fill="{color_for(t, k)}"/>')
        out.append(f'<text x="{lx + 18}" y="{y + 10}">t = {t}</text>')
    out.append("</g>")
    if spec.title:
        out.append(f'<text x="{f.left}" y="{f.top - 8}" font-family="sans-serif" '
                   f'font-size="13">{escape(spec.title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def geometry_csv(result: BackreachResult) -> str:
    """One row per ball with its axis-aligned extent."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = result.dim
    w.writerow(["t", "index", "p", "radius"] + [f"c{i + 1}" for i in range(n)]
               + [f"lo{i + 1}" for i in range(n)] + [f"hi{i + 1}" for i in range(n)])
    for s in result.steps:
        for j, b in enumerate(s.balls):
            c = np.asarray(b.center)
            w.writerow([s.t, j, "inf" if b.p == math.inf else 1, repr(b.radius)]
                       + [repr(float(v)) for v in c]
                       + [repr(float(v)) for v in c - b.radius]
                       + [repr(float(v)) for v in c + b.radius])
    return buf.getvalue()
