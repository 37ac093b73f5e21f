"""Procedural clips and the two hand-built feature streams.

A clip is a short sequence of grayscale frames: a textured static
background with one bright object (disk or square) sliding across it.
Ground-truth masks are rasterized analytically at quarter resolution,
which is where the finest pipeline stage lives.

Appearance features summarize single-frame intensity statistics at
each stage's stride; motion features are temporal finite differences,
so a static clip produces exactly zero motion everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng

STRIDES = (4, 8, 16, 32)
FEATURE_BASE_CHANNELS = 4


@dataclass
class Clip:
    images: np.ndarray  # (T, R, R) float64 in [0, 1]
    masks: np.ndarray  # (T, R//4, R//4) bool
    centers: np.ndarray  # (T, 2) normalized (cx, cy)
    radius: float  # normalized half-extent
    shape: str


def _pixel_centers(n: int):
    """Coordinates of n pixel centers covering [0, 1]."""
    return (np.arange(n) + 0.5) / n


def _rasterize(shape: str, n: int, cx: float, cy: float, radius: float) -> np.ndarray:
    xs = _pixel_centers(n)[None, :]
    ys = _pixel_centers(n)[:, None]
    if shape == "disk":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2
    if shape == "square":
        return np.maximum(np.abs(xs - cx), np.abs(ys - cy)) <= radius
    raise ValueError(f"unknown shape {shape!r}")


def synth_clip(
    rng: Rng,
    base: int,
    frames: int,
    shape: str = "disk",
    radius: float = 0.3,
    static: bool = False,
) -> Clip:
    """Deterministic moving-object clip at resolution base x base.

    base must be a positive multiple of 4 so the mask grid is exact.
    The object slides on a straight line chosen to keep it inside the
    frame; `static` pins it in place (for motion-feature tests).
    """
    if base < 4 or base % 4 != 0:
        raise ValueError("base resolution must be a positive multiple of 4")
    if frames < 1:
        raise ValueError("frames must be >= 1")
    xs = _pixel_centers(base)[None, :]
    ys = _pixel_centers(base)[:, None]
    f1, f2 = 2.0 + rng.child(0).uniform(0.0, 2.0), 3.0 + rng.child(1).uniform(0.0, 2.0)
    phase = rng.child(2).uniform(0.0, 2 * math.pi)
    texture = 0.35 + 0.12 * np.sin(2 * math.pi * f1 * xs + phase) * np.cos(
        2 * math.pi * f2 * ys
    )
    texture = texture + 0.03 * rng.child(3).normal((base, base))

    lo, hi = radius + 0.05, 1.0 - radius - 0.05
    if lo >= hi:
        raise ValueError("radius too large for the frame")
    c0 = rng.child(4).uniform(lo, hi, 2)
    c1 = rng.child(5).uniform(lo, hi, 2)
    if static:
        c1 = c0.copy()

    images = np.empty((frames, base, base))
    hm = base // 4
    masks = np.empty((frames, hm, hm), dtype=bool)
    centers = np.empty((frames, 2))
    for t in range(frames):
        a = 0.0 if frames == 1 else t / (frames - 1)
        cx, cy = (1 - a) * c0 + a * c1
        centers[t] = (cx, cy)
        obj = _rasterize(shape, base, cx, cy, radius)
        shade = 0.85 + 0.1 * (xs - cx)  # mild gradient so the object is not flat
        images[t] = np.where(obj, shade, texture)
        masks[t] = _rasterize(shape, hm, cx, cy, radius)
    return Clip(
        images=np.clip(images, 0.0, 1.0),
        masks=masks,
        centers=centers,
        radius=radius,
        shape=shape,
    )


def analytic_mask_area(clip: Clip) -> float:
    """Expected mask pixel count at the mask grid resolution."""
    hm = clip.masks.shape[1]
    if clip.shape == "disk":
        return math.pi * (clip.radius * hm) ** 2
    return (2 * clip.radius * hm) ** 2


# ---------------------------------------------------------------------------
# Pooling and feature stacks


def _pool_mean(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average pooling via an index map, exact for any size ratio.

    Input pixel r maps to output cell (r * out_h) // in_h; every input
    pixel contributes to exactly one cell.
    """
    in_h, in_w = img.shape
    ri = (np.arange(in_h) * out_h) // in_h
    ci = (np.arange(in_w) * out_w) // in_w
    flat_idx = (ri[:, None] * out_w + ci[None, :]).ravel()
    sums = np.bincount(flat_idx, weights=img.ravel(), minlength=out_h * out_w)
    counts = np.bincount(flat_idx, minlength=out_h * out_w)
    return (sums / counts).reshape(out_h, out_w)


def stage_dims(base: int) -> list[tuple[int, int]]:
    """(H_l, W_l) per stage; each stage halves the previous one with
    ceiling rounding."""
    return [(-(-base // s), -(-base // s)) for s in STRIDES]


def _grad_xy(img: np.ndarray):
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:] = img[:, 1:] - img[:, :-1]
    gy[1:, :] = img[1:, :] - img[:-1, :]
    return gx, gy


def _base_channels_appearance(img: np.ndarray, h: int, w: int) -> np.ndarray:
    p = _pool_mean(img, h, w)
    gx, gy = _grad_xy(p)
    return np.stack([p, gx, gy, p * p])  # (4, h, w)


def _base_channels_motion(diff: np.ndarray, h: int, w: int) -> np.ndarray:
    d = _pool_mean(diff, h, w)
    da = _pool_mean(np.abs(diff), h, w)
    return np.stack([d, da, d * d, da * da])


def feature_projections(feature_seed: int, channels: tuple[int, ...]):
    """Fixed per-stage linear maps from the 4 base channels to each
    stage's width, one pair (appearance, motion) per stage. These are
    part of the data pipeline, not trained."""
    rng = Rng(feature_seed)
    out = []
    for l, c in enumerate(channels):
        pa = rng.child(2 * l).normal((FEATURE_BASE_CHANNELS, c))
        pm = rng.child(2 * l + 1).normal((FEATURE_BASE_CHANNELS, c))
        out.append((pa, pm))
    return out


def _tokens_from_base(base_ch: np.ndarray, proj: np.ndarray) -> np.ndarray:
    """(4, H, W) -> (H*W, C) via the fixed projection; plain numpy is
    fine here, features sit outside the measured kernels."""
    b, h, w = base_ch.shape
    flat = base_ch.reshape(b, h * w).T  # (N, 4), row-major over (h, w)
    return flat @ proj


def clip_feature_stacks(clip: Clip, channels: tuple[int, ...], feature_seed: int = 417):
    """Per-frame appearance and motion token stacks.

    Returns (app, mot): lists indexed by frame, each a list over
    stages of (N_l, C_l) arrays. Motion at frame 0 compares the frame
    with itself, so it is exactly zero.
    """
    projs = feature_projections(feature_seed, channels)
    dims = stage_dims(clip.images.shape[1])
    app, mot = [], []
    for t in range(clip.images.shape[0]):
        img = clip.images[t]
        prev = clip.images[t - 1] if t > 0 else clip.images[t]
        diff = img - prev
        app_t, mot_t = [], []
        for (h, w), (pa, pm) in zip(dims, projs):
            app_t.append(_tokens_from_base(_base_channels_appearance(img, h, w), pa))
            mot_t.append(_tokens_from_base(_base_channels_motion(diff, h, w), pm))
        app.append(app_t)
        mot.append(mot_t)
    return app, mot
