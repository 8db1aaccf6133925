"""Synthetic paired optical/SAR scenes.

Both views share one geometry: 2-6 random convex polygons over a textured
background.  The optical view gets bright per-polygon colours with a smooth
shading ramp; the SAR view gets bright backscatter on the same polygons and
multiplicative gamma speckle (shape ``SPECKLE_LOOKS``, unit mean).
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .rng import Xoshiro256pp
from .tensor import Tensor

SPECKLE_LOOKS = 4.0


def _convex_polygon(gen: np.random.Generator, size: int) -> np.ndarray:
    """Vertices (y, x) in counter-clockwise order around a random centre."""
    k = int(gen.integers(3, 8))
    cy, cx = gen.uniform(0.15, 0.85, 2) * size
    radius = gen.uniform(0.15, 0.3) * size
    angles = np.sort(gen.uniform(0, 2 * np.pi, k))
    radii = radius * gen.uniform(0.7, 1.0, k)
    return np.stack([cy + radii * np.sin(angles), cx + radii * np.cos(angles)], axis=1)


def polygon_mask(vertices: np.ndarray, size: int) -> np.ndarray:
    """Pixels whose centres lie inside the polygon (half-plane test)."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    # convex hull of the sorted-angle vertices keeps the half-plane test valid
    pts = _hull(vertices)
    inside = np.ones((size, size), dtype=bool)
    for i in range(len(pts)):
        y0, x0 = pts[i]
        y1, x1 = pts[(i + 1) % len(pts)]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside &= cross >= 0
    return inside


def _hull(points: np.ndarray) -> np.ndarray:
    pts = sorted(map(tuple, points))
    if len(pts) < 3:
        return np.array(pts)

    def cross(o, a, b):
        return (a[1] - o[1]) * (b[0] - o[0]) - (a[0] - o[0]) * (b[1] - o[1])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    # orient so that the interior gives non-negative cross products
    yy, xx = hull.mean(axis=0)
    y0, x0 = hull[0]
    y1, x1 = hull[1]
    if (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) < 0:
        hull = hull[::-1]
    return hull


def _texture(gen: np.random.Generator, size: int) -> np.ndarray:
    """Smooth low-amplitude background texture in [0, 1]."""
    coarse = gen.uniform(0, 1, (size // 8 + 2, size // 8 + 2))
    idx = np.linspace(0, coarse.shape[0] - 1.001, size)
    i0 = idx.astype(int)
    f = idx - i0
    rows = coarse[i0] * (1 - f)[:, None] + coarse[i0 + 1] * f[:, None]
    tex = rows[:, i0] * (1 - f)[None, :] + rows[:, i0 + 1] * f[None, :]
    return tex


def synth_scene(seed: int, size: int):
    """Return ``(optical [3,H,W], sar [1,H,W], support [H,W] bool)`` as numpy arrays."""
    gen = Xoshiro256pp(seed).numpy_generator()
    tex = _texture(gen, size)
    base = gen.uniform(0.08, 0.2, 3)
    optical = base[:, None, None] + 0.1 * tex[None]
    sar = 0.12 + 0.08 * tex
    support = np.zeros((size, size), dtype=bool)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    for _ in range(int(gen.integers(2, 7))):
        verts = _convex_polygon(gen, size)
        mask = polygon_mask(verts, size)
        colour = gen.uniform(0.5, 0.95, 3)
        direction = gen.uniform(-1, 1, 2)
        shade = 0.9 + 0.1 * (direction[0] * (yy - 0.5) + direction[1] * (xx - 0.5))
        for c in range(3):
            optical[c][mask] = (colour[c] * shade)[mask]
        sar[mask] = gen.uniform(0.6, 0.85)
        support |= mask
    speckle = gen.gamma(SPECKLE_LOOKS, 1.0 / SPECKLE_LOOKS, (size, size))
    sar = sar * speckle
    return np.clip(optical, 0, 1), np.clip(sar, 0, 1)[None], support


def synth_pair(seed: int, size: int = 64, dtype="f32") -> Tuple[Tensor, Tensor]:
    """Deterministic (optical [3,H,W], SAR [1,H,W]) pair with values in [0, 1]."""
    opt, sar, _ = synth_scene(seed, size)
    return Tensor(opt, dtype=dtype), Tensor(sar, dtype=dtype)


def structure_mask(image: np.ndarray, threshold: float = 0.4, smooth: int = 3) -> np.ndarray:
    """Bright-structure mask: box-smoothed channel mean above ``threshold``."""
    lum = np.asarray(image).mean(axis=0)
    if smooth > 1:
        pad = smooth // 2
        p = np.pad(lum, pad, mode="edge")
        win = np.lib.stride_tricks.sliding_window_view(p, (smooth, smooth))
        lum = win.mean(axis=(-2, -1))
    return lum > threshold
