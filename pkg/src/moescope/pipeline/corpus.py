"""Image corpora: a synthetic two-domain generator, the MOEC file format and CSV dimension tables.

MOEC layout (little-endian)::

    b"MOEC" | u32 version | u64 N | u64 S | u64 D
    images  NDT1 [N,3,S,S]
    labels  N x i64
    factors NDT1 [N,D]
    names   N x (u32 length, UTF-8)
    dimension names  D x (u32 length, UTF-8)
"""
import colorsys
import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, FormatError
from ..ndtensor.serialize import read_tensor, write_tensor

MAGIC = b"MOEC"
VERSION = 1

KNOB_NAMES = [
    "domain",
    "spatial_frequency",
    "curvature",
    "color_saturation",
    "element_count",
    "hue",
    "brightness",
    "orientation",
    "contrast",
    "scale",
]
ORGANIC_FAMILIES = ["blob", "wave", "cell", "fur", "cloud"]
GEOMETRIC_FAMILIES = ["box", "ring", "bar", "grid", "polygon"]
CLASS_NAMES = ORGANIC_FAMILIES + GEOMETRIC_FAMILIES


@dataclass
class Corpus:
    images: np.ndarray  # [N,3,S,S] in [0,1]
    labels: np.ndarray  # [N] int64, -1 when unlabeled
    factors: np.ndarray  # [N,D]
    names: list
    dim_names: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.factors = np.ascontiguousarray(self.factors, dtype=np.float64)
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.factors.shape[0] != n or len(self.names) != n:
            raise FormatError(
                f"corpus fields disagree on N: images {n}, labels {self.labels.shape[0]}, "
                f"factors {self.factors.shape[0]}, names {len(self.names)}"
            )
        if not self.dim_names:
            self.dim_names = default_dim_names(self.factors.shape[1])
        if len(self.dim_names) != self.factors.shape[1]:
            raise FormatError(f"{len(self.dim_names)} dimension names for {self.factors.shape[1]} factor columns")

    def __len__(self):
        return self.images.shape[0]

    @property
    def size(self):
        return self.images.shape[2]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Corpus(self.images[idx], self.labels[idx], self.factors[idx], [self.names[i] for i in idx], list(self.dim_names))

    def channel_stats(self):
        """Per-channel mean and standard deviation over the whole corpus."""
        return self.images.mean(axis=(0, 2, 3)), self.images.std(axis=(0, 2, 3))


def default_dim_names(d):
    return [KNOB_NAMES[i] if i < len(KNOB_NAMES) else f"knob_{i}" for i in range(d)]


def _grid(S):
    c = (np.arange(S) + 0.5) / S
    return np.meshgrid(c, c, indexing="ij")  # y, x


def _rotate(y, x, angle):
    ca, sa = np.cos(angle), np.sin(angle)
    return x * ca + y * sa, -x * sa + y * ca


def _organic_field(rng, family, k, S):
    """Smooth intensity field in [0,1]; no hard edges."""
    y, x = _grid(S)
    freq = 1.0 + 3.0 * k["spatial_frequency"]
    angle = np.pi * k["orientation"]
    bend = 0.25 * k["curvature"]
    count = k["element_count"]
    if family == "blob":
        n = 2 + int(round(6 * count))
        cy, cx = rng.random(n), rng.random(n)
        sigma = (0.07 + 0.12 * (1 - k["spatial_frequency"])) * (0.7 + 0.6 * k["scale"])
        d2 = (y[None] - cy[:, None, None]) ** 2 + (x[None] - cx[:, None, None]) ** 2
        f = np.exp(-d2 / (2 * sigma**2)).max(axis=0)
    elif family == "wave":
        t, u = _rotate(y, x, angle)
        f = 0.5 + 0.5 * np.sin(2 * np.pi * (freq * (t + bend * np.sin(2 * np.pi * u)) + rng.random()))
    elif family == "cell":
        n = 3 + int(round(8 * count))
        py, px = rng.random(n), rng.random(n)
        d = np.sqrt((y[None] - py[:, None, None]) ** 2 + (x[None] - px[:, None, None]) ** 2).min(axis=0)
        f = np.exp(-((d / (0.08 + 0.12 * (1 - k["spatial_frequency"]))) ** 2))
    elif family == "fur":
        f = np.zeros_like(x)
        for _ in range(10):
            a = angle + (1.0 - k["curvature"]) * rng.normal(0, 0.3)
            t, u = _rotate(y, x, a)
            f += np.sin(2 * np.pi * (freq * (1 + rng.random()) * t + bend * np.sin(2 * np.pi * u)) + 2 * np.pi * rng.random())
        f = 0.5 + 0.5 * np.tanh(f / 3.0)
    else:  # cloud
        f = np.zeros_like(x)
        amp = 1.0
        for octave in range(3):
            for _ in range(3):
                t, _u = _rotate(y, x, 2 * np.pi * rng.random())
                f += amp * np.sin(2 * np.pi * (0.7 + freq * 0.5) * (octave + 1) * t + 2 * np.pi * rng.random())
            amp *= 0.45 + 0.2 * k["curvature"]
        f = (f - f.min()) / (np.ptp(f) + 1e-12)
    return f


def _geometric_mask(rng, family, k, S):
    """Binary foreground mask with hard edges."""
    y, x = _grid(S)
    angle = 0.5 * np.pi * k["orientation"]
    count = k["element_count"]
    size = (0.12 + 0.25 * (1 - k["spatial_frequency"])) * (0.7 + 0.6 * k["scale"])
    m = np.zeros_like(x, dtype=bool)
    if family == "box":
        for _ in range(1 + int(round(4 * count))):
            cy, cx = rng.random(2)
            t, u = _rotate(y - cy, x - cx, angle + (1 - k["curvature"]) * rng.normal(0, 0.2))
            m ^= (np.abs(t) < size) & (np.abs(u) < size * (0.5 + k["curvature"]))
    elif family == "ring":
        for _ in range(1 + int(round(4 * count))):
            cy, cx = rng.random(2)
            r = np.sqrt((y - cy) ** 2 + (x - cx) ** 2)
            width = 0.03 + 0.06 * k["curvature"]
            m |= np.abs(r - size) < width
    elif family == "bar":
        freq = 2.0 + 5.0 * k["spatial_frequency"]
        t, u = _rotate(y, x, angle)
        m = np.sin(2 * np.pi * freq * (t + 0.08 * k["curvature"] * np.sin(2 * np.pi * u)) + 2 * np.pi * rng.random()) > 0
    elif family == "grid":
        cells = 2.0 + 5.0 * k["spatial_frequency"]
        t, u = _rotate(y, x, angle)
        m = (np.floor(cells * t + rng.random()) + np.floor(cells * u + rng.random())) % 2 == 0
    else:  # polygon: triangles
        for _ in range(1 + int(round(4 * count))):
            c = rng.random(2)
            base = 2 * np.pi * rng.random()
            pts = [c + size * 1.3 * np.array([np.sin(base + j * 2 * np.pi / 3), np.cos(base + j * 2 * np.pi / 3)]) for j in range(3)]
            inside = np.ones_like(m)
            for j in range(3):
                (ay, ax), (by, bx) = pts[j], pts[(j + 1) % 3]
                inside &= (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0
            m ^= inside
    return m


def _rgb(h, s, v):
    return np.array(colorsys.hsv_to_rgb(h % 1.0, float(np.clip(s, 0, 1)), float(np.clip(v, 0, 1))))


def render(factors, family, seed, size):
    """Render one image deterministically from its factor vector."""
    rng = np.random.default_rng(seed)
    names = default_dim_names(len(factors))
    k = {n: 0.5 for n in KNOB_NAMES}
    k.update({n: float(v) for n, v in zip(names, factors)})
    sat = 0.25 + 0.7 * k["color_saturation"]
    val = 0.35 + 0.55 * k["brightness"]
    spread = 0.3 + 0.7 * k["contrast"]
    if k["domain"] < 0.5:
        f = _organic_field(rng, ORGANIC_FAMILIES[family], k, size)
        hue = 0.02 + 0.28 * k["hue"]
        lo = _rgb(hue, sat, val * (1 - 0.6 * spread))
        hi = _rgb(hue + 0.06, sat * 0.8, val)
        img = lo[:, None, None] * (1 - f) + hi[:, None, None] * f
    else:
        m = _geometric_mask(rng, GEOMETRIC_FAMILIES[family], k, size).astype(np.float64)
        hue = 0.5 + 0.3 * k["hue"]
        fg = _rgb(hue, sat, val)
        bg = _rgb(hue + 0.12, sat * 0.5, np.clip(val + spread * (0.5 - val) * 1.6, 0.05, 0.95))
        img = fg[:, None, None] * m + bg[:, None, None] * (1 - m)
    for i in range(len(KNOB_NAMES), len(factors)):
        # extra knobs each drive the amplitude of a faint grating of their own frequency
        y, x = _grid(size)
        img = img + 0.08 * (factors[i] - 0.5) * np.sin(2 * np.pi * (1 + i % 5) * (x + y))[None]
    img = img + rng.normal(0.0, 0.015, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_corpus(n, size=32, dims=8, seed=0):
    """Synthetic stand-in for a labelled image set with a per-image dimension table.

    Column 0 of ``factors`` is the binary domain (0 organic texture renderer,
    1 geometric structure renderer); the other columns are continuous knobs in
    [0,1]. Labels index ten families, five per domain.
    """
    if dims < 2:
        raise ConfigError(f"dims must be >= 2 (column 0 is the domain factor), got {dims}")
    if size < 16:
        raise ConfigError(f"image size {size} is too small to render (minimum 16)")
    if n < 1:
        raise ConfigError(f"corpus needs at least one image, got n={n}")
    rng = np.random.default_rng(seed)
    factors = rng.random((n, dims))
    factors[:, 0] = (rng.random(n) < 0.5).astype(np.float64)
    families = rng.integers(0, 5, size=n)
    render_seeds = rng.integers(0, 2**63 - 1, size=n)
    images = np.empty((n, 3, size, size))
    labels = np.empty(n, dtype=np.int64)
    names = []
    for i in range(n):
        images[i] = render(factors[i], int(families[i]), int(render_seeds[i]), size)
        labels[i] = int(factors[i, 0]) * 5 + int(families[i])
        names.append(f"{CLASS_NAMES[labels[i]]}_{i:05d}")
    return Corpus(images, labels, factors, names, default_dim_names(dims))


def _write_str(f, s):
    raw = s.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated corpus file while reading {what}")
    return buf


def _read_str(f, what):
    (length,) = struct.unpack("<I", _read(f, 4, what))
    return _read(f, length, what).decode("utf-8")


def save_corpus(path, corpus):
    n, _, s, _ = corpus.images.shape
    d = corpus.factors.shape[1]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQQQ", VERSION, n, s, d))
        write_tensor(f, corpus.images)
        f.write(corpus.labels.astype("<i8").tobytes())
        write_tensor(f, corpus.factors)
        for name in corpus.names:
            _write_str(f, name)
        for name in corpus.dim_names:
            _write_str(f, name)


def load_corpus(path):
    with open(path, "rb") as f:
        magic = _read(f, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"{path}: not a corpus file (magic {magic!r})")
        version, n, s, d = struct.unpack("<IQQQ", _read(f, 28, "header"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported corpus version {version}")
        images = read_tensor(f)
        if images.shape != (n, 3, s, s):
            raise FormatError(f"{path}: image tensor {images.shape} disagrees with header N={n}, S={s}")
        labels = np.frombuffer(_read(f, 8 * n, "labels"), dtype="<i8").astype(np.int64)
        factors = read_tensor(f)
        if factors.shape != (n, d):
            raise FormatError(f"{path}: factor tensor {factors.shape} disagrees with header N={n}, D={d}")
        names = [_read_str(f, "image names") for _ in range(n)]
        dim_names = [_read_str(f, "dimension names") for _ in range(d)]
    return Corpus(images, labels, factors, names, dim_names)


def load_dimension_table(path):
    """Read a CSV with a header row of dimension names; returns ``(names, matrix)``."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError(f"{path}: empty dimension table")
    header, body = rows[0], [r for r in rows[1:] if r]
    try:
        table = np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(len(body), len(header))
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric or ragged dimension table: {exc}") from exc
    return header, table


def attach_dimension_table(corpus, path, require_nonnegative=True):
    """Replace the corpus factors with an imported behaviour-dimension table."""
    names, table = load_dimension_table(path)
    if table.shape[0] != len(corpus):
        raise FormatError(f"dimension table has {table.shape[0]} rows but the corpus has {len(corpus)} images")
    if require_nonnegative and (table < 0).any():
        raise FormatError(f"{path}: behaviour dimensions must be non-negative")
    return Corpus(corpus.images, corpus.labels, table, list(corpus.names), names)
