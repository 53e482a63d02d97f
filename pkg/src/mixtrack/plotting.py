"""Deterministic SVG rendering of tracking results.

Selected frames are laid out on a grid; in each panel the ground truth
is drawn solid, observations dashed and estimates with a bold stroke.
The output is plain hand-assembled SVG so that identical inputs always
produce identical bytes.
"""

import numpy as np

from . import fileformats

_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#17becf")


class PlotError(ValueError):
    pass


def _fmt(v):
    return format(float(v), ".4f")


def _rect(box, panel_x, panel_y, size, style):
    x0, y0, x1, y1 = box
    lo, hi = min(x0, x1), max(x0, x1)
    lo_y, hi_y = min(y0, y1), max(y0, y1)
    return (
        f'<rect x="{_fmt(panel_x + lo * size)}" y="{_fmt(panel_y + lo_y * size)}" '
        f'width="{_fmt((hi - lo) * size)}" height="{_fmt((hi_y - lo_y) * size)}" '
        f'fill="none" {style}/>'
    )


def render_svg(estimates, truth=None, observations=None, frames=None,
               panel_size=160, columns=6):
    """Build an SVG string.

    estimates: (T, N, 4) boxes in unit coordinates; truth: optional
    (T, N, 4); observations: optional per-frame (K_t, 4) arrays; frames:
    frame indices to draw (default: up to 12 evenly spaced).
    """
    estimates = np.asarray(estimates, dtype=float)
    if estimates.size == 0:
        raise PlotError("no estimates to plot")
    t_len, n_src = estimates.shape[0], estimates.shape[1]
    if frames is None:
        count = min(12, t_len)
        frames = sorted({int(round(i)) for i in np.linspace(0, t_len - 1, count)})
    frames = list(frames)
    if any(t < 0 or t >= t_len for t in frames):
        raise PlotError("frame index out of range")
    cols = min(columns, len(frames))
    rows = (len(frames) + cols - 1) // cols
    pad = 8
    cell = panel_size + pad
    width = cols * cell + pad
    height = rows * cell + pad

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for i, t in enumerate(frames):
        px = pad + (i % cols) * cell
        py = pad + (i // cols) * cell
        parts.append(
            f'<rect x="{px}" y="{py}" width="{panel_size}" height="{panel_size}" '
            f'fill="none" stroke="#cccccc" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{px + 4}" y="{py + 14}" font-size="11" '
            f'font-family="monospace" fill="#666666">t={t}</text>'
        )
        for n in range(n_src):
            color = _COLORS[n % len(_COLORS)]
            if truth is not None:
                parts.append(_rect(np.asarray(truth)[t, n], px, py, panel_size,
                                   f'stroke="{color}" stroke-width="1"'))
            parts.append(_rect(estimates[t, n], px, py, panel_size,
                               f'stroke="{color}" stroke-width="2.5" opacity="0.8"'))
        if observations is not None:
            for box in np.asarray(observations[t]).reshape(-1, 4):
                parts.append(_rect(box, px, py, panel_size,
                                   'stroke="#444444" stroke-width="1" '
                                   'stroke-dasharray="4 3"'))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, estimates, truth=None, observations=None, frames=None):
    fileformats.atomic_write_text(
        path, render_svg(estimates, truth=truth, observations=observations, frames=frames)
    )
