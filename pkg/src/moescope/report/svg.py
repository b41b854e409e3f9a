"""Dependency-free SVG figures with fixed colour maps and fixed number formatting.

Every coordinate is printed with two decimals and every colour comes from a
fixed table, so identical inputs always give identical bytes.
"""
import base64
import struct
import zlib
from xml.sax.saxutils import escape

import numpy as np

# viridis anchors; interpolated linearly in RGB
_SEQUENTIAL = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [110, 206, 88], [181, 222, 43], [253, 231, 37],
], dtype=np.float64)
_MISSING = "#bdbdbd"
# categorical palette (Tableau 10)
PALETTE = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
           "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"]
FONT = 'font-family="DejaVu Sans, Arial, sans-serif"'


def _f(x):
    return f"{x:.2f}"


def colour(t):
    """Sequential colour for ``t`` in [0, 1]; NaN maps to grey."""
    if not np.isfinite(t):
        return _MISSING
    t = min(max(float(t), 0.0), 1.0) * (len(_SEQUENTIAL) - 1)
    i = min(int(t), len(_SEQUENTIAL) - 2)
    rgb = _SEQUENTIAL[i] + (t - i) * (_SEQUENTIAL[i + 1] - _SEQUENTIAL[i])
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def _doc(width, height, body, title):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
            f'viewBox="0 0 {_f(width)} {_f(height)}">\n')
    t = f'<text x="{_f(width / 2)}" y="18.00" text-anchor="middle" font-size="13" {FONT}>{escape(title)}</text>\n'
    return head + '<rect width="100%" height="100%" fill="#ffffff"/>\n' + t + "".join(body) + "</svg>\n"


def heatmap(matrix, row_labels, col_labels, title="", vmin=None, vmax=None, cell=28, annotate=True):
    M = np.asarray(matrix, dtype=np.float64)
    finite = M[np.isfinite(M)]
    lo = vmin if vmin is not None else (finite.min() if finite.size else 0.0)
    hi = vmax if vmax is not None else (finite.max() if finite.size else 1.0)
    span = hi - lo if hi > lo else 1.0
    left, top = 90.0, 40.0
    rows, cols = M.shape
    body = []
    for i in range(rows):
        y = top + i * cell
        body.append(f'<text x="{_f(left - 4)}" y="{_f(y + cell / 2 + 4)}" text-anchor="end" font-size="10" {FONT}>'
                    f'{escape(str(row_labels[i]))}</text>\n')
        for j in range(cols):
            x = left + j * cell
            v = M[i, j]
            t = (v - lo) / span if np.isfinite(v) else np.nan
            body.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(cell)}" height="{_f(cell)}" fill="{colour(t)}"/>\n')
            if annotate and np.isfinite(v):
                ink = "#000000" if t > 0.6 else "#ffffff"
                body.append(f'<text x="{_f(x + cell / 2)}" y="{_f(y + cell / 2 + 3)}" text-anchor="middle" '
                            f'font-size="8" fill="{ink}" {FONT}>{v:.2f}</text>\n')
    yb = top + rows * cell
    for j in range(cols):
        x = left + j * cell + cell / 2
        body.append(f'<text x="{_f(x)}" y="{_f(yb + 12)}" text-anchor="end" font-size="10" '
                    f'transform="rotate(-45 {_f(x)} {_f(yb + 12)})" {FONT}>{escape(str(col_labels[j]))}</text>\n')
    # colour bar
    xb = left + cols * cell + 16
    for s in range(20):
        body.append(f'<rect x="{_f(xb)}" y="{_f(top + (19 - s) * rows * cell / 20)}" width="10.00" '
                    f'height="{_f(rows * cell / 20)}" fill="{colour(s / 19)}"/>\n')
    body.append(f'<text x="{_f(xb + 14)}" y="{_f(top + 8)}" font-size="9" {FONT}>{hi:.2f}</text>\n')
    body.append(f'<text x="{_f(xb + 14)}" y="{_f(top + rows * cell)}" font-size="9" {FONT}>{lo:.2f}</text>\n')
    return _doc(xb + 60, yb + 70, body, title)


def _axes(x, y, width, height, pad):
    def scale(v, lo, hi, a, b):
        return a + (v - lo) / (hi - lo if hi > lo else 1.0) * (b - a)
    xl, xh = float(np.min(x)), float(np.max(x))
    yl, yh = float(np.min(y)), float(np.max(y))
    sx = lambda v: scale(v, xl, xh, pad, width - pad)
    sy = lambda v: scale(v, yl, yh, height - pad, pad + 10)
    body = [
        f'<line x1="{_f(pad)}" y1="{_f(height - pad)}" x2="{_f(width - pad)}" y2="{_f(height - pad)}" stroke="#000000"/>\n',
        f'<line x1="{_f(pad)}" y1="{_f(height - pad)}" x2="{_f(pad)}" y2="{_f(pad + 10)}" stroke="#000000"/>\n',
        f'<text x="{_f(pad)}" y="{_f(height - pad + 14)}" font-size="9" {FONT}>{xl:.2f}</text>\n',
        f'<text x="{_f(width - pad)}" y="{_f(height - pad + 14)}" text-anchor="end" font-size="9" {FONT}>{xh:.2f}</text>\n',
        f'<text x="{_f(pad - 4)}" y="{_f(height - pad)}" text-anchor="end" font-size="9" {FONT}>{yl:.2f}</text>\n',
        f'<text x="{_f(pad - 4)}" y="{_f(pad + 14)}" text-anchor="end" font-size="9" {FONT}>{yh:.2f}</text>\n',
    ]
    return sx, sy, body


def scatter(x, y, groups=None, labels=None, title="", xlabel="", ylabel="", width=420, height=380, radius=2.5):
    """Scatter plot; ``groups`` index the categorical palette, ``labels`` annotate points."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    groups = np.zeros(len(x), dtype=int) if groups is None else np.asarray(groups)
    pad = 50.0
    sx, sy, body = _axes(x, y, width, height, pad)
    for i in range(len(x)):
        c = PALETTE[int(groups[i]) % len(PALETTE)]
        body.append(f'<circle cx="{_f(sx(x[i]))}" cy="{_f(sy(y[i]))}" r="{_f(radius)}" fill="{c}" fill-opacity="0.8"/>\n')
        if labels is not None:
            body.append(f'<text x="{_f(sx(x[i]) + radius + 2)}" y="{_f(sy(y[i]) + 3)}" font-size="8" {FONT}>'
                        f'{escape(str(labels[i]))}</text>\n')
    body.append(f'<text x="{_f(width / 2)}" y="{_f(height - 12)}" text-anchor="middle" font-size="11" {FONT}>{escape(xlabel)}</text>\n')
    body.append(f'<text x="14.00" y="{_f(height / 2)}" text-anchor="middle" font-size="11" '
                f'transform="rotate(-90 14.00 {_f(height / 2)})" {FONT}>{escape(ylabel)}</text>\n')
    return _doc(width, height, body, title)


def line(x, y, title="", xlabel="", ylabel="", mark=None, width=420, height=300):
    """Polyline with point markers; ``mark`` highlights one x value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pad = 50.0
    sx, sy, body = _axes(x, y, width, height, pad)
    pts = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in zip(x, y))
    body.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[0]}" stroke-width="1.5"/>\n')
    for a, b in zip(x, y):
        fill = PALETTE[2] if mark is not None and a == mark else PALETTE[0]
        body.append(f'<circle cx="{_f(sx(a))}" cy="{_f(sy(b))}" r="3.00" fill="{fill}"/>\n')
    for a in x:
        body.append(f'<text x="{_f(sx(a))}" y="{_f(height - pad + 26)}" text-anchor="middle" font-size="8" {FONT}>{a:g}</text>\n')
    body.append(f'<text x="{_f(width / 2)}" y="{_f(height - 6)}" text-anchor="middle" font-size="11" {FONT}>{escape(xlabel)}</text>\n')
    body.append(f'<text x="14.00" y="{_f(height / 2)}" text-anchor="middle" font-size="11" '
                f'transform="rotate(-90 14.00 {_f(height / 2)})" {FONT}>{escape(ylabel)}</text>\n')
    return _doc(width, height, body, title)


def png_bytes(image):
    """Encode an RGB image in [0,1] with shape [3,H,W] as an 8-bit PNG."""
    img = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    _, h, w = img.shape
    raw = np.concatenate([np.zeros((h, 1), np.uint8), img.transpose(1, 2, 0).reshape(h, 3 * w)], axis=1)

    def chunk(tag, data):
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw.tobytes(), 9)) + chunk(b"IEND", b""))


def image_grid(rows, row_labels, title="", scale=2):
    """Rows of images (each [3,S,S] in [0,1]) embedded as PNG data URIs."""
    left, top, gap = 110.0, 34.0, 4.0
    width = height = 0
    body = []
    y = top
    for images, label in zip(rows, row_labels):
        body.append(f'<text x="{_f(left - 6)}" y="{_f(y + 14)}" text-anchor="end" font-size="10" {FONT}>{escape(str(label))}</text>\n')
        x = left
        size = 0
        for img in images:
            size = img.shape[1] * scale
            uri = base64.b64encode(png_bytes(img)).decode("ascii")
            body.append(f'<image x="{_f(x)}" y="{_f(y)}" width="{_f(size)}" height="{_f(size)}" '
                        f'style="image-rendering:pixelated" href="data:image/png;base64,{uri}"/>\n')
            x += size + gap
        width = max(width, x)
        y += size + gap
    height = y
    return _doc(width + 10, height + 10, body, title)
