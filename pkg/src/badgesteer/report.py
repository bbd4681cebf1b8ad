"""Deterministic SVG charts for golden-file testing.

Pure functions of their inputs: fixed 800x480 viewport, no timestamps, no
randomness, colors assigned from a fixed palette by sorted series name.  The
same data always renders byte-identical SVG, which is what makes the chart
outputs diffable in tests and across runs.
"""

import math

import numpy as np

WIDTH = 800
HEIGHT = 480
MARGIN_LEFT = 62
MARGIN_RIGHT = 18
MARGIN_TOP = 42
MARGIN_BOTTOM = 46

# color-blind-safe cycle; series are sorted by name before assignment
PALETTE = (
    "#0072b2",
    "#d55e00",
    "#009e73",
    "#cc79a7",
    "#e69f00",
    "#56b4e9",
    "#f0e442",
    "#000000",
)


def nice_ticks(lo, hi, target=6):
    """Round tick positions covering [lo, hi]: step is 1/2/5 times a power
    of ten, endpoints snapped outward."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("tick range must be finite")
    if hi < lo:
        lo, hi = hi, lo
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    raw = (hi - lo) / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if raw <= step:
            break
    first = math.floor(lo / step) * step
    last = math.ceil(hi / step) * step
    n = int(round((last - first) / step))
    # round off binary drift (0.6000000000000001) and snap -0.0 to 0
    return [0.0 if abs(v) < step * 1e-9 else round(v, 12)
            for v in (first + k * step for k in range(n + 1))]


def _fmt(v):
    """Short deterministic number format for labels."""
    return f"{v:g}"


def _coord(v):
    """Pixel coordinate with fixed precision (byte-stable)."""
    return f"{v:.2f}"


class _Frame:
    """Shared plot scaffolding: scales, axes, gridlines, labels."""

    def __init__(self, xs, ys, title, x_label, y_label):
        if len(xs) and len(ys):
            self.x_ticks = nice_ticks(min(xs), max(xs))
            self.y_ticks = nice_ticks(min(ys), max(ys))
        else:
            self.x_ticks = nice_ticks(0.0, 1.0)
            self.y_ticks = nice_ticks(0.0, 1.0)
        self.x0, self.x1 = self.x_ticks[0], self.x_ticks[-1]
        self.y0, self.y1 = self.y_ticks[0], self.y_ticks[-1]
        self.title = title
        self.x_label = x_label
        self.y_label = y_label

    def px(self, x):
        span = self.x1 - self.x0
        frac = (x - self.x0) / span
        return MARGIN_LEFT + frac * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)

    def py(self, y):
        span = self.y1 - self.y0
        frac = (y - self.y0) / span
        return HEIGHT - MARGIN_BOTTOM - frac * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)

    def header(self):
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
            f'<text x="{WIDTH // 2}" y="24" font-size="16" text-anchor="middle">'
            f"{_esc(self.title)}</text>",
        ]
        bottom = HEIGHT - MARGIN_BOTTOM
        right = WIDTH - MARGIN_RIGHT
        for t in self.x_ticks:
            x = self.px(t)
            parts.append(
                f'<line x1="{_coord(x)}" y1="{MARGIN_TOP}" x2="{_coord(x)}" '
                f'y2="{bottom}" stroke="#dddddd" stroke-width="1"/>'
            )
            parts.append(
                f'<text x="{_coord(x)}" y="{bottom + 18}" font-size="11" '
                f'text-anchor="middle">{_fmt(t)}</text>'
            )
        for t in self.y_ticks:
            y = self.py(t)
            parts.append(
                f'<line x1="{MARGIN_LEFT}" y1="{_coord(y)}" x2="{right}" '
                f'y2="{_coord(y)}" stroke="#dddddd" stroke-width="1"/>'
            )
            parts.append(
                f'<text x="{MARGIN_LEFT - 6}" y="{_coord(y + 4)}" font-size="11" '
                f'text-anchor="end">{_fmt(t)}</text>'
            )
        parts.append(
            f'<line x1="{MARGIN_LEFT}" y1="{bottom}" x2="{right}" y2="{bottom}" '
            f'stroke="#333333" stroke-width="1"/>'
        )
        parts.append(
            f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" '
            f'y2="{bottom}" stroke="#333333" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{(MARGIN_LEFT + right) // 2}" y="{HEIGHT - 10}" font-size="12" '
            f'text-anchor="middle">{_esc(self.x_label)}</text>'
        )
        parts.append(
            f'<text x="16" y="{(MARGIN_TOP + bottom) // 2}" font-size="12" '
            f'text-anchor="middle" transform="rotate(-90 16 '
            f'{(MARGIN_TOP + bottom) // 2})">{_esc(self.y_label)}</text>'
        )
        return parts

    def legend(self, names):
        parts = []
        x = WIDTH - MARGIN_RIGHT - 150
        y = MARGIN_TOP + 8
        for i, name in enumerate(names):
            color = PALETTE[i % len(PALETTE)]
            yy = y + 16 * i
            parts.append(
                f'<rect x="{x}" y="{yy}" width="12" height="12" fill="{color}"/>'
            )
            parts.append(
                f'<text x="{x + 18}" y="{yy + 10}" font-size="11">{_esc(name)}</text>'
            )
        return parts


def _esc(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def _gather(series):
    """Normalize and validate {name: (x, y)} input; sort by name."""
    out = []
    for name in sorted(series):
        x, y = series[name]
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError(f"series {name!r}: x and y must be equal-length 1-D")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError(f"series {name!r}: values must be finite")
        out.append((name, x, y))
    return out


def line_chart(series, title="", x_label="", y_label=""):
    """Render {name: (x, y)} line series to an SVG string.

    An empty dict (or all-empty series) renders the bare axes over a [0,1]
    domain, which is the documented empty-input behavior.
    """
    data = _gather(series)
    all_x = np.concatenate([x for _, x, _ in data]) if data else np.array([])
    all_y = np.concatenate([y for _, _, y in data]) if data else np.array([])
    frame = _Frame(all_x, all_y, title, x_label, y_label)
    parts = frame.header()
    for i, (name, x, y) in enumerate(data):
        if x.size == 0:
            continue
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_coord(frame.px(a))},{_coord(frame.py(b))}" for a, b in zip(x, y))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
    parts.extend(frame.legend([name for name, _, _ in data]))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_chart(series, title="", x_label="", y_label=""):
    """Render {name: (x, y)} point clouds to an SVG string (one color per
    sorted name; radius fixed)."""
    data = _gather(series)
    all_x = np.concatenate([x for _, x, _ in data]) if data else np.array([])
    all_y = np.concatenate([y for _, _, y in data]) if data else np.array([])
    frame = _Frame(all_x, all_y, title, x_label, y_label)
    parts = frame.header()
    for i, (name, x, y) in enumerate(data):
        color = PALETTE[i % len(PALETTE)]
        for a, b in zip(x, y):
            parts.append(
                f'<circle cx="{_coord(frame.px(a))}" cy="{_coord(frame.py(b))}" r="2.5" '
                f'fill="{color}" fill-opacity="0.6"/>'
            )
    parts.extend(frame.legend([name for name, _, _ in data]))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, svg):
    with open(path, "w") as fh:
        fh.write(svg)
