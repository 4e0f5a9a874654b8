"""
svg.py
------

Hand-written SVG 1.1 output: top-down contour maps with a colour bar and
optional channel overlay, and stacked-id histograms of the plate angles.

Output is deterministic: fixed element order and fixed number precision.
"""

from __future__ import annotations

import json
import math
from html import escape
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import defaults

if TYPE_CHECKING:
    from .alignment import HistogramBin
    from .channel import ChannelPointSet
    from .contours import ContourSet

# viridis sampled at 0, 1/8, ..., 1
_RAMP = [
    (0x44, 0x01, 0x54),
    (0x47, 0x2D, 0x7B),
    (0x3B, 0x52, 0x8B),
    (0x2C, 0x72, 0x8E),
    (0x21, 0x91, 0x8C),
    (0x28, 0xAE, 0x80),
    (0x5E, 0xC9, 0x62),
    (0xAD, 0xDC, 0x30),
    (0xFD, 0xE7, 0x25),
]
CHANNEL_COLOUR = "#ff8c00"
RANGE_COLOUR = "#e00000"

_PLOT_W = 600.0
_MARGIN = 50.0
_BAR_W = 22.0


def ramp(t: float) -> str:
    """Colour of the ramp at fraction ``t`` in [0, 1]."""
    t = min(max(t, 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    f = t - i
    a, b = _RAMP[i], _RAMP[i + 1]
    return "#" + "".join(f"{round(a[k] + f * (b[k] - a[k])):02x}" for k in range(3))


def level_colour(z: float, half_range: float) -> str:
    """Colour for elevation ``z``; the ramp runs outward from 0 on both sides."""
    return ramp(abs(z) / half_range)


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def render_contours_svg(
    contours: "ContourSet",
    channel: "ChannelPointSet | None" = None,
    size_class: str = "violin_viola",
    half_range: float | None = None,
) -> str:
    """
    Top-down contour map of one plate.

    Each contour is stroked with the colour of its level on a symmetric
    scale of +/-28 mm (violins and violas) or +/-80 mm (cellos). The colour
    bar marks the plate's exact elevation range with a red bracket. Channel
    points, when given, are drawn as orange dots over the contours.
    ``half_range`` overrides the size-class scale.
    """
    half = defaults.COLOUR_RANGE_MM[size_class] if half_range is None else float(half_range)
    warnings = []
    out_of_range = [lv.z for lv in contours.levels if abs(lv.z) > half]
    if out_of_range:
        warnings.append(
            f"{len(out_of_range)} contour levels outside +/-{half:g} mm clamped to the scale end"
        )
    if contours.z_min < -half or contours.z_max > half:
        warnings.append(f"elevation range exceeds +/-{half:g} mm; bracket clamped")

    x0, y0, x1, y1 = contours.xy_bounds
    if not (x1 > x0 and y1 > y0):
        x0, y0, x1, y1 = -50.0, -50.0, 50.0, 50.0
    scale = _PLOT_W / (x1 - x0)
    plot_h = (y1 - y0) * scale
    width = _MARGIN * 2 + _PLOT_W + 110.0
    height = _MARGIN * 2 + plot_h

    def px(x):
        return _MARGIN + (np.asarray(x) - x0) * scale

    def py(y):
        return _MARGIN + (y1 - np.asarray(y)) * scale

    meta = {
        "plate_id": contours.plate_id,
        "side": contours.side,
        "size_class": size_class,
        "colour_range_mm": half,
        "z_min_mm": round(contours.z_min, 6),
        "z_max_mm": round(contours.z_max, 6),
        "levels": len(contours.levels),
        "channel_points": 0 if channel is None else len(channel),
        "warnings": warnings,
    }
    lines = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(width)}" '
        f'height="{_f(height)}" viewBox="0 0 {_f(width)} {_f(height)}">',
        f"<title>{escape(contours.plate_id)} {contours.side} contour lines</title>",
        f"<metadata>{escape(json.dumps(meta, sort_keys=True))}</metadata>",
        f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>',
    ]
    lines += _axes(x0, y0, x1, y1, px, py)

    lines.append('<g id="contours" fill="none" stroke-width="0.8" stroke-linejoin="round">')
    for lv in contours.levels:
        colour = level_colour(lv.z, half)
        for pl in lv.polylines:
            xs, ys = px(pl.points[:, 0]), py(pl.points[:, 1])
            d = "M" + " L".join(f"{_f(a)} {_f(b)}" for a, b in zip(xs.tolist(), ys.tolist()))
            if pl.closed:
                d += " Z"
            lines.append(f'<path data-level="{lv.z:g}" stroke="{colour}" d="{d}"/>')
    lines.append("</g>")

    if channel is not None:
        lines.append(f'<g id="channel" fill="{CHANNEL_COLOUR}" stroke="none">')
        for a, b in zip(px(channel.x).tolist(), py(channel.y).tolist()):
            lines.append(f'<circle cx="{_f(a)}" cy="{_f(b)}" r="1.2"/>')
        lines.append("</g>")

    lines += _colour_bar(half, contours.z_min, contours.z_max, _MARGIN * 2 + _PLOT_W, height)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _nice_step(span: float) -> float:
    raw = span / 6
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 5, 10):
        if raw <= m * mag:
            return m * mag
    return 10 * mag


def _axes(x0, y0, x1, y1, px, py) -> list[str]:
    out = ['<g id="axes" stroke="#444444" stroke-width="0.6" font-family="sans-serif" font-size="9" fill="#444444">']
    out.append(
        f'<rect x="{_f(px(x0))}" y="{_f(py(y1))}" width="{_f(px(x1) - px(x0))}" '
        f'height="{_f(py(y0) - py(y1))}" fill="none"/>'
    )
    step = _nice_step(max(x1 - x0, y1 - y0))
    for v in np.arange(math.ceil(x0 / step) * step, x1 + 1e-9, step).tolist():
        out.append(f'<line x1="{_f(px(v))}" y1="{_f(py(y0))}" x2="{_f(px(v))}" y2="{_f(py(y0) + 4)}"/>')
        out.append(f'<text x="{_f(px(v))}" y="{_f(py(y0) + 14)}" text-anchor="middle" stroke="none">{v:g}</text>')
    for v in np.arange(math.ceil(y0 / step) * step, y1 + 1e-9, step).tolist():
        out.append(f'<line x1="{_f(px(x0) - 4)}" y1="{_f(py(v))}" x2="{_f(px(x0))}" y2="{_f(py(v))}"/>')
        out.append(f'<text x="{_f(px(x0) - 6)}" y="{_f(py(v) + 3)}" text-anchor="end" stroke="none">{v:g}</text>')
    out.append(f'<text x="{_f(px((x0 + x1) / 2))}" y="{_f(py(y0) + 28)}" text-anchor="middle" stroke="none">x (mm)</text>')
    out.append("</g>")
    return out


def _colour_bar(half: float, z_min: float, z_max: float, left: float, height: float) -> list[str]:
    top, bottom = _MARGIN, height - _MARGIN
    span = bottom - top

    def yz(z: float) -> float:
        z = min(max(z, -half), half)
        return bottom - (z + half) / (2 * half) * span

    out = ['<g id="colour-bar" font-family="sans-serif" font-size="9" fill="#444444">']
    n = 64
    for i in range(n):
        za, zb = -half + 2 * half * i / n, -half + 2 * half * (i + 1) / n
        colour = level_colour(0.5 * (za + zb), half)
        out.append(
            f'<rect x="{_f(left)}" y="{_f(yz(zb))}" width="{_f(_BAR_W)}" '
            f'height="{_f(yz(za) - yz(zb))}" fill="{colour}" stroke="none"/>'
        )
    out.append(
        f'<rect x="{_f(left)}" y="{_f(top)}" width="{_f(_BAR_W)}" height="{_f(span)}" '
        'fill="none" stroke="#444444" stroke-width="0.6"/>'
    )
    for v in np.linspace(-half, half, 5).tolist():
        out.append(
            f'<text x="{_f(left + _BAR_W + 14)}" y="{_f(yz(v) + 3)}">{v:+g}</text>'
        )
    out.append(f'<text x="{_f(left)}" y="{_f(top - 8)}">mm</text>')
    # exact elevation range of the plate
    bx = left + _BAR_W + 6
    ya, yb = yz(z_max), yz(z_min)
    out.append(
        f'<g id="elevation-range" stroke="{RANGE_COLOUR}" stroke-width="2" fill="none">'
        f'<line x1="{_f(bx)}" y1="{_f(ya)}" x2="{_f(bx)}" y2="{_f(yb)}"/>'
        f'<line x1="{_f(bx - 4)}" y1="{_f(ya)}" x2="{_f(bx)}" y2="{_f(ya)}"/>'
        f'<line x1="{_f(bx - 4)}" y1="{_f(yb)}" x2="{_f(bx)}" y2="{_f(yb)}"/>'
        "</g>"
    )
    out.append("</g>")
    return out


HISTOGRAM_COLOURS = {
    "sb_back_signed": "#d62728",
    "sym_horizontal": "#e6c229",
    "sb_horizontal": "#1f77b4",
    "back_horizontal": "#2ca02c",
}


def histogram_svg(bins: Sequence["HistogramBin"], bin_width: float, title: str, colour: str = "#1f77b4") -> str:
    """Bar chart whose bars are stacks of labelled boxes, one per instrument."""
    cell_w, cell_h = 46.0, 14.0
    if bins:
        k_lo = round(bins[0].low / bin_width)
        k_hi = round(bins[-1].low / bin_width)
    else:
        k_lo = k_hi = 0
    nbins = k_hi - k_lo + 1
    tallest = max((b.count for b in bins), default=1)
    plot_w = nbins * cell_w
    plot_h = tallest * cell_h
    width = plot_w + 2 * _MARGIN
    height = plot_h + 2 * _MARGIN + 20
    base = _MARGIN + 10 + plot_h
    lines = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(width)}" '
        f'height="{_f(height)}" viewBox="0 0 {_f(width)} {_f(height)}">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>',
        f'<text x="{_f(width / 2)}" y="{_f(_MARGIN - 14)}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{escape(title)}</text>',
        '<g font-family="sans-serif" font-size="8" text-anchor="middle">',
    ]
    for b in bins:
        i = round(b.low / bin_width) - k_lo
        x = _MARGIN + i * cell_w
        for j, ident in enumerate(b.ids):
            y = base - (j + 1) * cell_h
            lines.append(
                f'<rect x="{_f(x + 1)}" y="{_f(y)}" width="{_f(cell_w - 2)}" height="{_f(cell_h - 1)}" '
                f'fill="{colour}" stroke="#333333" stroke-width="0.4"/>'
            )
            lines.append(f'<text x="{_f(x + cell_w / 2)}" y="{_f(y + cell_h - 4)}">{escape(ident)}</text>')
    lines.append("</g>")
    lines.append('<g font-family="sans-serif" font-size="8" fill="#444444" stroke="#444444" stroke-width="0.6">')
    lines.append(f'<line x1="{_f(_MARGIN)}" y1="{_f(base)}" x2="{_f(_MARGIN + plot_w)}" y2="{_f(base)}"/>')
    for i in range(nbins + 1):
        x = _MARGIN + i * cell_w
        v = (k_lo + i) * bin_width
        lines.append(f'<line x1="{_f(x)}" y1="{_f(base)}" x2="{_f(x)}" y2="{_f(base + 4)}"/>')
        lines.append(f'<text x="{_f(x)}" y="{_f(base + 14)}" text-anchor="middle" stroke="none">{v:.2f}</text>')
    lines.append(
        f'<text x="{_f(_MARGIN + plot_w / 2)}" y="{_f(base + 28)}" text-anchor="middle" stroke="none">degrees</text>'
    )
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
