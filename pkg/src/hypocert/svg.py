"""Self-contained SVG heatmaps: one rect per cell, 256-step palette, min/max annotation."""

from xml.sax.saxutils import escape

import numpy as np

_ANCHORS = np.array([
    (68, 1, 84), (71, 44, 122), (59, 81, 139), (44, 113, 142), (33, 144, 141),
    (39, 173, 129), (92, 200, 99), (170, 220, 50), (253, 231, 37),
], float)

PALETTE = np.stack([np.interp(np.linspace(0, 1, 256), np.linspace(0, 1, len(_ANCHORS)), _ANCHORS[:, c])
                    for c in range(3)], -1).round().astype(int)


def color(t):
    i = int(np.clip(round(float(t) * 255), 0, 255))
    r, g, b = PALETTE[i]
    return f"#{r:02x}{g:02x}{b:02x}"


def _fmt(v):
    return f"{v:.6g}"


def heatmap_svg(values, xs, ys, title="", cell=8, label="lambda"):
    """SVG text for ``values[i, j]`` at (xs[i], ys[j]); x runs right, y runs up."""
    V = np.asarray(values, float)
    nx, ny = V.shape
    lo, hi = float(np.min(V)), float(np.max(V))
    span = hi - lo
    pad, bar = 50, 20
    width = pad * 2 + nx * cell + bar + 60
    height = pad * 2 + ny * cell
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<title>{escape(title)}</title>',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    for i in range(nx):
        for j in range(ny):
            t = 0.5 if span == 0 else (V[i, j] - lo) / span
            x0 = pad + i * cell
            y0 = pad + (ny - 1 - j) * cell
            out.append(f'<rect x="{x0}" y="{y0}" width="{cell}" height="{cell}" fill="{color(t)}"/>')
    bx = pad + nx * cell + 15
    steps = 64
    for k in range(steps):
        y0 = pad + (steps - 1 - k) * (ny * cell) / steps
        out.append(f'<rect x="{bx}" y="{y0:.3f}" width="{bar}" height="{ny * cell / steps + 0.5:.3f}" '
                   f'fill="{color(k / (steps - 1))}"/>')
    out.append(f'<text x="{bx + bar + 4}" y="{pad + 4}">{_fmt(hi)}</text>')
    out.append(f'<text x="{bx + bar + 4}" y="{pad + ny * cell}">{_fmt(lo)}</text>')
    out.append(f'<text x="{pad}" y="{pad - 25}" font-size="13">{escape(title)}</text>')
    out.append(f'<text x="{pad}" y="{pad - 8}">min {escape(label)} = {_fmt(lo)}, max = {_fmt(hi)}</text>')
    out.append(f'<text x="{pad}" y="{height - pad + 18}">{_fmt(xs[0])}</text>')
    out.append(f'<text x="{pad + nx * cell}" y="{height - pad + 18}" text-anchor="end">{_fmt(xs[-1])}</text>')
    out.append(f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end">{_fmt(ys[0])}</text>')
    out.append(f'<text x="{pad - 4}" y="{pad + 8}" text-anchor="end">{_fmt(ys[-1])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_heatmap(path, values, xs, ys, title="", **kw):
    with open(path, "w") as fh:
        fh.write(heatmap_svg(values, xs, ys, title, **kw))
