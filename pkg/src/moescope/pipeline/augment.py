"""Two-view contrastive augmentation: resized crop, flip, colour jitter, grayscale, blur, normalise."""
from dataclasses import dataclass

import numpy as np

_LUMA = np.array([0.299, 0.587, 0.114])
_TO_YIQ = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
_FROM_YIQ = np.linalg.inv(_TO_YIQ)


@dataclass
class AugmentConfig:
    size: int = 32
    crop_scale: tuple = (0.3, 1.0)
    crop_ratio: tuple = (3 / 4, 4 / 3)
    flip_p: float = 0.5
    jitter_p: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_p: float = 0.2
    blur_p: float = 0.5
    blur_sigma: tuple = (0.1, 2.0)
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.25, 0.25, 0.25)

    @classmethod
    def identity(cls, size, mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0)):
        return cls(size=size, crop_scale=(1.0, 1.0), crop_ratio=(1.0, 1.0), flip_p=0.0, jitter_p=0.0,
                   grayscale_p=0.0, blur_p=0.0, mean=tuple(mean), std=tuple(std))

    def with_stats(self, mean, std):
        d = dict(vars(self))
        d["mean"], d["std"] = tuple(float(m) for m in mean), tuple(float(s) for s in std)
        return AugmentConfig(**d)


def _crop_box(rng, S, scale, ratio):
    area = S * S
    lr = np.log(ratio)
    for _ in range(10):
        a = area * rng.uniform(*scale)
        r = np.exp(rng.uniform(*lr))
        w = np.sqrt(a * r)
        h = np.sqrt(a / r)
        if w <= S and h <= S:
            return rng.uniform(0, S - h), rng.uniform(0, S - w), h, w
    return 0.0, 0.0, float(S), float(S)


def _resample(img, top, left, h, w, out):
    """Bilinear sample of the box (top, left, h, w) onto an out x out grid."""
    S = img.shape[1]
    ys = np.clip(top + (np.arange(out) + 0.5) * h / out - 0.5, 0, S - 1)
    xs = np.clip(left + (np.arange(out) + 0.5) * w / out - 0.5, 0, S - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, S - 1)
    x1 = np.minimum(x0 + 1, S - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = img[:, y0][:, :, x0]
    b = img[:, y0][:, :, x1]
    c = img[:, y1][:, :, x0]
    d = img[:, y1][:, :, x1]
    return (a * (1 - wx) + b * wx) * (1 - wy) + (c * (1 - wx) + d * wx) * wy


def _jitter(rng, img, cfg):
    ops = rng.permutation(4)
    for op in ops:
        if op == 0 and cfg.brightness > 0:
            img = img * rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)
        elif op == 1 and cfg.contrast > 0:
            gray = float(np.tensordot(_LUMA, img, axes=1).mean())
            f = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)
            img = f * img + (1 - f) * gray
        elif op == 2 and cfg.saturation > 0:
            gray = np.tensordot(_LUMA, img, axes=1)[None]
            f = rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)
            img = f * img + (1 - f) * gray
        elif op == 3 and cfg.hue > 0:
            theta = 2 * np.pi * rng.uniform(-cfg.hue, cfg.hue)
            c, s = np.cos(theta), np.sin(theta)
            rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
            img = np.tensordot(_FROM_YIQ @ rot @ _TO_YIQ, img, axes=1)
        img = np.clip(img, 0.0, 1.0)
    return img


def _blur(img, sigma, size):
    radius = max(1, int(round(0.05 * size)))
    t = np.arange(-radius, radius + 1)
    k = np.exp(-(t**2) / (2 * sigma**2))
    k /= k.sum()
    pad = np.pad(img, ((0, 0), (radius, radius), (radius, radius)), mode="reflect")
    S = img.shape[1]
    tmp = sum(k[i] * pad[:, i : i + S, :] for i in range(len(k)))
    return sum(k[i] * tmp[:, :, i : i + S] for i in range(len(k)))


def augment(image, rng, cfg):
    """One augmented, normalised view of a [3,S,S] image in [0,1]."""
    top, left, h, w = _crop_box(rng, image.shape[1], cfg.crop_scale, cfg.crop_ratio)
    img = _resample(image, top, left, h, w, cfg.size)
    if rng.random() < cfg.flip_p:
        img = img[:, :, ::-1]
    if rng.random() < cfg.jitter_p:
        img = _jitter(rng, img, cfg)
    if rng.random() < cfg.grayscale_p:
        img = np.repeat(np.tensordot(_LUMA, img, axes=1)[None], 3, axis=0)
    if rng.random() < cfg.blur_p:
        img = _blur(img, rng.uniform(*cfg.blur_sigma), cfg.size)
    mean = np.asarray(cfg.mean)[:, None, None]
    std = np.asarray(cfg.std)[:, None, None]
    return np.ascontiguousarray((img - mean) / std)


def augment_pair(image, seed, cfg):
    """Two independently augmented views; all randomness flows from ``seed``."""
    ss = np.random.SeedSequence(seed)
    ra, rb = (np.random.default_rng(s) for s in ss.spawn(2))
    return augment(image, ra, cfg), augment(image, rb, cfg)


def augment_batch(images, seeds, cfg):
    """Stack views as rows 2j, 2j+1 for origin j: output [2N,3,size,size]."""
    out = np.empty((2 * len(images), 3, cfg.size, cfg.size))
    for j, (img, seed) in enumerate(zip(images, seeds)):
        out[2 * j], out[2 * j + 1] = augment_pair(img, seed, cfg)
    return out


def normalize(images, cfg):
    """Normalise un-augmented images exactly as the last augmentation step does."""
    mean = np.asarray(cfg.mean)[None, :, None, None]
    std = np.asarray(cfg.std)[None, :, None, None]
    return (np.asarray(images) - mean) / std
