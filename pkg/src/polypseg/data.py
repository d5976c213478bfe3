"""Synthetic low-contrast blob data and a generic image/mask directory reader.

Each synthetic image contains 1-3 smooth elliptical blobs whose texture is
close to the background (low contrast), optionally with small bright specular
spots, mimicking the difficulty of the real task. The mask marks blob
interiors. Generation is fully determined by (n, size, seed, params).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import ConfigError


@dataclass
class SyntheticParams:
    min_blobs: int = 1
    max_blobs: int = 3
    min_radius_frac: float = 0.10
    max_radius_frac: float = 0.28
    contrast: float = 0.12
    noise: float = 0.04
    specular_prob: float = 0.5


@dataclass
class SyntheticSample:
    image: np.ndarray  # (3, S, S) in [0, 1]
    mask: np.ndarray   # (S, S) binary
    provenance: dict = field(default_factory=dict)


def _ellipse_mask(size: int, cy: float, cx: float, ry: float, rx: float,
                  theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    y = yy - cy
    x = xx - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = (x * ct + y * st) / rx
    v = (-x * st + y * ct) / ry
    return (u * u + v * v) <= 1.0


def gen_synthetic(n: int, size: int, seed: int,
                  params: SyntheticParams | None = None) -> list[SyntheticSample]:
    if size < 16:
        raise ConfigError(f"synthetic image size must be >= 16; got {size}")
    if n < 1:
        raise ConfigError(f"need n >= 1 samples; got {n}")
    p = params if params is not None else SyntheticParams()
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        base = rng.uniform(0.35, 0.6, size=3)
        image = np.empty((3, size, size))
        for c in range(3):
            tex = gaussian_filter(rng.normal(size=(size, size)), sigma=size / 8.0)
            tex = tex / (np.abs(tex).max() + 1e-9)
            image[c] = base[c] + 0.08 * tex
        n_blobs = int(rng.integers(p.min_blobs, p.max_blobs + 1))
        mask = np.zeros((size, size), dtype=bool)
        blobs = []
        for _ in range(n_blobs):
            ry = rng.uniform(p.min_radius_frac, p.max_radius_frac) * size
            rx = rng.uniform(p.min_radius_frac, p.max_radius_frac) * size
            ry, rx = max(ry, 2.0), max(rx, 2.0)
            cy = rng.uniform(ry, size - ry)
            cx = rng.uniform(rx, size - rx)
            theta = rng.uniform(0, np.pi)
            blob = _ellipse_mask(size, cy, cx, ry, rx, theta)
            mask |= blob
            blobs.append({"cy": cy, "cx": cx, "ry": ry, "rx": rx, "theta": theta})
            delta = rng.uniform(-p.contrast, p.contrast, size=3)
            soft = gaussian_filter(blob.astype(np.float64), sigma=1.0)
            for c in range(3):
                image[c] += delta[c] * soft
            if rng.uniform() < p.specular_prob:
                sy = cy + rng.uniform(-0.3, 0.3) * ry
                sx = cx + rng.uniform(-0.3, 0.3) * rx
                spot = _ellipse_mask(size, sy, sx, max(1.0, 0.15 * ry),
                                     max(1.0, 0.15 * rx), 0.0)
                image += 0.35 * gaussian_filter(spot.astype(np.float64), sigma=0.8)
        if p.noise > 0:
            image += rng.normal(scale=p.noise, size=image.shape)
        samples.append(SyntheticSample(
            image=np.clip(image, 0.0, 1.0),
            mask=mask.astype(np.float64),
            provenance={"index": i, "seed": seed, "blobs": blobs, "noise": p.noise},
        ))
    return samples


def save_samples(samples: list[SyntheticSample], out_dir: str) -> None:
    """Write PNG pairs under out_dir/images and out_dir/masks."""
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    for i, s in enumerate(samples):
        name = f"sample_{i:04d}.png"
        img = (np.clip(s.image, 0, 1) * 255).round().astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(img).save(os.path.join(img_dir, name))
        Image.fromarray((s.mask * 255).astype(np.uint8)).save(os.path.join(mask_dir, name))


def load_directory(path: str, size: int | None = None) -> list[SyntheticSample]:
    """Read image/mask PNG pairs from <path>/images and <path>/masks."""
    img_dir = os.path.join(path, "images")
    mask_dir = os.path.join(path, "masks")
    if not os.path.isdir(img_dir) or not os.path.isdir(mask_dir):
        raise ConfigError(f"data directory {path} must contain images/ and masks/")
    samples = []
    for name in sorted(os.listdir(img_dir)):
        mask_path = os.path.join(mask_dir, name)
        if not os.path.isfile(mask_path):
            raise ConfigError(f"mask missing for image {name}")
        img = Image.open(os.path.join(img_dir, name)).convert("RGB")
        mask = Image.open(mask_path).convert("L")
        if size is not None:
            img = img.resize((size, size), Image.BILINEAR)
            mask = mask.resize((size, size), Image.NEAREST)
        image = np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0
        m = (np.asarray(mask, dtype=np.float64) / 255.0 >= 0.5).astype(np.float64)
        samples.append(SyntheticSample(image=image, mask=m, provenance={"file": name}))
    if not samples:
        raise ConfigError(f"no samples found under {img_dir}")
    return samples
