"""Photometric augmentations that keep pixel positions, plus cross-view masking."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Camera, DepthMap, pixel_grid, reproject

GAMMA_RANGE = (0.25, 4.0)
SCALE_RANGE = (0.5, 2.0)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"empty rectangle {self}")

    def fits(self, height: int, width: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height


@dataclass(frozen=True)
class AugmentParams:
    """Augmentation parameters.

    ``jitter`` spreads gamma, brightness and contrast per view: each view
    multiplies them by ``exp(jitter * U[-1, 1])`` drawn from its own sub-seed.
    Zero jitter applies the nominal values to every view.
    """

    mask_rects: tuple[Rect, ...] = ()
    gamma: float = 1.0
    brightness_scale: float = 1.0
    contrast_scale: float = 1.0
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "mask_rects",
            tuple(r if isinstance(r, Rect) else Rect(*r) for r in self.mask_rects),
        )
        if not GAMMA_RANGE[0] <= self.gamma <= GAMMA_RANGE[1]:
            raise ValueError(f"gamma {self.gamma} outside {GAMMA_RANGE}")
        for name in ("brightness_scale", "contrast_scale"):
            if not SCALE_RANGE[0] <= getattr(self, name) <= SCALE_RANGE[1]:
                raise ValueError(f"{name} outside {SCALE_RANGE}")
        if self.blur_sigma < 0 or self.noise_sigma < 0 or self.jitter < 0:
            raise ValueError("blur_sigma, noise_sigma and jitter must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mask_rects"] = [[r.x0, r.y0, r.x1, r.y1] for r in self.mask_rects]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentParams":
        d = dict(d)
        d["mask_rects"] = tuple(Rect(*r) for r in d.get("mask_rects", ()))
        return cls(**d)


@dataclass
class AugmentedBundle:
    images: list[np.ndarray]
    da_mask: np.ndarray
    params: list[dict] = field(default_factory=list)


def random_params(
    shape: tuple[int, int], rng: np.random.Generator, n_rects: int = 1, rect_frac: float = 0.25
) -> AugmentParams:
    """Draw a parameter set inside the default ranges."""
    h, w = shape
    rects = []
    for _ in range(n_rects):
        rh = max(1, int(h * rect_frac))
        rw = max(1, int(w * rect_frac))
        y0 = int(rng.integers(0, h - rh + 1))
        x0 = int(rng.integers(0, w - rw + 1))
        rects.append(Rect(x0, y0, x0 + rw, y0 + rh))
    return AugmentParams(
        mask_rects=tuple(rects),
        gamma=float(np.exp(rng.uniform(-0.3, 0.3))),
        brightness_scale=float(rng.uniform(0.8, 1.2)),
        contrast_scale=float(rng.uniform(0.8, 1.2)),
        blur_sigma=float(rng.uniform(0.0, 1.0)),
        noise_sigma=float(rng.uniform(0.0, 0.02)),
        jitter=0.1,
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def rect_mask(shape: tuple[int, int], rects: Sequence[Rect]) -> np.ndarray:
    """Boolean union of rectangles on an (H, W) lattice."""
    m = np.zeros(shape, dtype=bool)
    for r in rects:
        if not r.fits(*shape):
            raise ValueError(f"rectangle {r} exceeds image bounds {shape}")
        m[r.y0 : r.y1, r.x0 : r.x1] = True
    return m


def crossview_mask(
    views: Sequence[np.ndarray],
    depth: DepthMap,
    cameras: Sequence[Camera],
    rects: Sequence[Rect],
) -> tuple[list[np.ndarray], np.ndarray]:
    """Occlude rectangles on the reference view and their reprojections elsewhere.

    Every source pixel carrying bilinear weight for a masked reference pixel's
    landing point is zeroed. Returns the masked views and the float {0, 1}
    mask of unoccluded reference pixels.
    """
    views = [np.array(v, dtype=float) for v in views]
    occl = rect_mask(depth.shape, rects)
    if not occl.any():
        return views, np.ones(depth.shape)
    if not depth.valid[occl].all():
        raise ValueError("depth must be valid on every masked reference pixel")
    views[0][occl] = 0.0
    ys, xs = np.nonzero(occl)
    uv = np.stack([xs, ys], axis=-1).astype(float)
    ref = cameras[0]
    for i in range(1, len(views)):
        cam = cameras[i]
        h, w = views[i].shape[:2]
        rep = reproject(uv, depth.values[ys, xs], ref.intrinsics, cam.intrinsics, cam.relative_to(ref), (h, w))
        # keep points whose bilinear footprint touches the image
        u, v = rep.uv[:, 0], rep.uv[:, 1]
        near = (rep.source_depth > 1e-9) & (u > -1) & (u < w) & (v > -1) & (v < h)
        u, v = u[near], v[near]
        fx, fy = np.floor(u).astype(int), np.floor(v).astype(int)
        for dx, wx in ((0, 1 - (u - fx)), (1, u - fx)):
            for dy, wy in ((0, 1 - (v - fy)), (1, v - fy)):
                sel = (wx * wy > 0)
                px, py = fx[sel] + dx, fy[sel] + dy
                ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
                views[i][py[ok], px[ok]] = 0.0
    return views, (~occl).astype(float)


def gamma_correct(image: np.ndarray, gamma: float) -> np.ndarray:
    """Elementwise ``v ** gamma`` on a [0, 1] image."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    image = np.asarray(image, dtype=float)
    if gamma == 1.0:
        return image.copy()
    return np.clip(image, 0.0, 1.0) ** gamma


def _blur_axis(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    n = x.shape[axis]
    out = np.zeros_like(x)
    norm = np.zeros(n)
    for k, wk in enumerate(kernel):
        off = k - r
        lo, hi = max(0, -off), min(n, n - off)
        if lo >= hi:
            continue
        dst = [slice(None)] * x.ndim
        src = [slice(None)] * x.ndim
        dst[axis] = slice(lo, hi)
        src[axis] = slice(lo + off, hi + off)
        out[tuple(dst)] += wk * x[tuple(src)]
        norm[lo:hi] += wk
    shape = [1] * x.ndim
    shape[axis] = n
    return out / norm.reshape(shape)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), renormalized at borders."""
    if sigma <= 0:
        return np.asarray(image, dtype=float).copy()
    r = int(math.ceil(3 * sigma))
    t = np.arange(-r, r + 1)
    # a tiny sigma overflows the exponent; the weight is 0 either way
    with np.errstate(over="ignore"):
        kernel = np.exp(-0.5 * (t / sigma) ** 2)
    kernel /= kernel.sum()
    return _blur_axis(_blur_axis(np.asarray(image, dtype=float), kernel, 0), kernel, 1)


def color_jitter_blur(
    image: np.ndarray,
    params: AugmentParams,
    seed: int | np.random.SeedSequence | None = None,
) -> np.ndarray:
    """Contrast, brightness, blur and additive noise, clamped to [0, 1]."""
    out = np.asarray(image, dtype=float)
    if params.contrast_scale != 1.0:
        out = (out - 0.5) * params.contrast_scale + 0.5
    if params.brightness_scale != 1.0:
        out = out * params.brightness_scale
    out = gaussian_blur(out, params.blur_sigma)
    if params.noise_sigma > 0:
        rng = np.random.default_rng(params.seed if seed is None else seed)
        out = out + rng.normal(0.0, params.noise_sigma, out.shape)
    return np.clip(out, 0.0, 1.0)


def _view_params(params: AugmentParams, ss: np.random.SeedSequence) -> AugmentParams:
    if params.jitter == 0:
        return params
    rng = np.random.default_rng(ss)
    g, b, c = np.exp(params.jitter * rng.uniform(-1, 1, 3))
    return AugmentParams(
        params.mask_rects,
        gamma=float(np.clip(params.gamma * g, *GAMMA_RANGE)),
        brightness_scale=float(np.clip(params.brightness_scale * b, *SCALE_RANGE)),
        contrast_scale=float(np.clip(params.contrast_scale * c, *SCALE_RANGE)),
        blur_sigma=params.blur_sigma,
        noise_sigma=params.noise_sigma,
        jitter=0.0,
        seed=params.seed,
    )


def compose_augmentation(
    views: Sequence[np.ndarray],
    depth: DepthMap,
    cameras: Sequence[Camera],
    params: AugmentParams,
) -> AugmentedBundle:
    """Cross-view masking, then gamma correction, then jitter/blur/noise."""
    masked, da_mask = crossview_mask(views, depth, cameras, params.mask_rects)
    seqs = np.random.SeedSequence(params.seed).spawn(len(views))
    images, used = [], []
    for img, ss in zip(masked, seqs):
        jitter_ss, noise_ss = ss.spawn(2)
        p = _view_params(params, jitter_ss)
        out = gamma_correct(img, p.gamma)
        out = color_jitter_blur(out, p, noise_ss)
        images.append(out)
        used.append({"gamma": p.gamma, "brightness_scale": p.brightness_scale, "contrast_scale": p.contrast_scale})
    return AugmentedBundle(images, da_mask, used)
